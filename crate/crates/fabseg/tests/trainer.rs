//! Training loops: schedule oracles, determinism, the freeze contract of
//! fine-tuning, and loss movement on tiny overfit problems.

use fabseg::data::{generate_synthetic_scene, Sample, SyntheticScene};
use fabseg::losses::{FinetuneLossWeights, PrompterLossWeights};
use fabseg::prompter::{init_prompter_params, PrompterConfig};
use fabseg::sam::{init_sam_params, is_frozen_param, DecoderHead, SamConfig};
use fabseg::trainer::{
    finetune_sam_block, poly_lr, train_prompter, AblationFlags, Duration, FinetunePlan,
    OptimizerKind, Phase, PromptSettings, TrainConfig, TrainLogEntry, TrainOutcome,
};
use fabseg::Error;
use fabseg_autograd::ParamSet;
use ndarray::{Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_prompter() -> PrompterConfig {
    PrompterConfig {
        backbone_channels: vec![4, 8],
        aspp_rates: vec![1, 2],
        aspp_channels: 8,
        decoder_channels: 8,
        num_classes: 2,
        input_size: (32, 32),
    }
}

fn tiny_sam() -> SamConfig {
    SamConfig {
        input_size: (32, 32),
        patch_size: 8,
        embed_dim: 16,
        encoder_depth: 1,
        encoder_heads: 2,
        prompt_dim: 16,
        decoder_depth: 1,
    }
}

fn scene_to_sample(id: &str, scene: &SyntheticScene) -> Sample {
    let raw = scene.image.pixels();
    let (h, w, _) = raw.dim();
    let mut image = Array3::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                image[[c, y, x]] = raw[[y, x, c]] / 255.0;
            }
        }
    }
    Sample {
        id: id.to_string(),
        image,
        region: scene.region_mask.pixels().index_axis(Axis(2), 0).to_owned(),
        boundary: scene.boundary_mask.pixels().index_axis(Axis(2), 0).to_owned(),
    }
}

fn make_samples(n: usize, size: usize) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let scene = generate_synthetic_scene(1000 + i as u64, 3, size).unwrap();
            scene_to_sample(&format!("tile{i}"), &scene)
        })
        .collect()
}

fn prompter_schedule(iterations: usize, batch: usize, lr0: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        phase: Phase::Prompter,
        optimizer: OptimizerKind::Sgd { momentum: 0.9 },
        batch_size: batch,
        duration: Duration::Iterations(iterations),
        lr0,
        power: 0.9,
        weight_decay: 1e-4,
        seed,
    }
}

fn finetune_schedule(epochs: usize, batch: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        phase: Phase::Finetune,
        optimizer: OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 },
        batch_size: batch,
        duration: Duration::Epochs(epochs),
        lr0: 0.001,
        power: 0.9,
        weight_decay: 1e-4,
        seed,
    }
}

fn init_sam(cfg: &SamConfig, seed: u64) -> ParamSet {
    let mut set = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_sam_params(cfg, &mut set, &mut rng).unwrap();
    set
}

fn assert_bitwise_equal(a: &ParamSet, b: &ParamSet, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: parameter counts differ");
    a.for_each_value(|name, va| {
        let vb = b.value(name).unwrap_or_else(|| panic!("{what}: {name} missing"));
        assert_eq!(va.shape(), vb.shape(), "{what}: {name} shape differs");
        for (x, y) in va.iter().zip(vb.iter()) {
            assert_eq!(x.to_bits(), y.to_bits(), "{what}: {name} differs");
        }
    });
}

fn changed_names(before: &ParamSet, after: &ParamSet) -> Vec<String> {
    let mut changed = Vec::new();
    before.for_each_value(|name, va| {
        let vb = after.value(name).expect("same schema");
        if va.iter().zip(vb.iter()).any(|(x, y)| x.to_bits() != y.to_bits()) {
            changed.push(name.to_string());
        }
    });
    changed
}

// Schedule oracle: lr0 * (1 - s/S)^p evaluated against independently
// computed references.
#[test]
fn poly_schedule_matches_closed_form_references() {
    assert_eq!(poly_lr(0, 1000, 0.004, 0.9).unwrap(), 0.004);
    assert_eq!(poly_lr(1000, 1000, 0.004, 0.9).unwrap(), 0.0);
    let mid = poly_lr(500, 1000, 0.004, 0.9).unwrap();
    assert!((mid - 0.0021435469250725863).abs() < 1e-9, "midpoint lr {mid}");
    let three_quarter = poly_lr(750, 1000, 0.004, 0.9).unwrap();
    assert!((three_quarter - 0.0011486983549970349).abs() < 1e-9);

    let mut last = f64::INFINITY;
    for step in 0..=1000 {
        let lr = poly_lr(step, 1000, 0.004, 0.9).unwrap();
        assert!(lr < last, "schedule must be strictly decreasing at step {step}");
        last = lr;
    }
}

#[test]
fn poly_schedule_rejects_bad_arguments() {
    assert!(matches!(poly_lr(11, 10, 0.004, 0.9), Err(Error::InvalidArgument(_))));
    assert!(matches!(poly_lr(0, 0, 0.004, 0.9), Err(Error::InvalidArgument(_))));
    assert!(matches!(poly_lr(0, 10, 0.0, 0.9), Err(Error::InvalidArgument(_))));
    assert!(matches!(poly_lr(0, 10, 0.004, -1.0), Err(Error::InvalidArgument(_))));
    assert!(matches!(poly_lr(0, 10, f64::NAN, 0.9), Err(Error::InvalidArgument(_))));
}

#[test]
fn log_lines_carry_step_lr_loss_and_terms() {
    let entry = TrainLogEntry {
        step: 3,
        lr: 0.004,
        loss: 1.25,
        terms: vec![("main_ce".into(), 1.0), ("aux_ce".into(), 0.625)],
    };
    let line = entry.format();
    assert!(line.starts_with("3,"), "line was {line}");
    assert!(line.contains("main_ce=") && line.contains("aux_ce="), "line was {line}");
    let fields: Vec<&str> = line.split(',').collect();
    assert_eq!(fields.len(), 5);
}

#[test]
fn prompter_loss_trends_down_on_a_tiny_overfit() {
    let samples = make_samples(2, 32);
    let mut log: Vec<TrainLogEntry> = Vec::new();
    let outcome = train_prompter(
        &tiny_prompter(),
        &PrompterLossWeights::default(),
        &prompter_schedule(60, 2, 0.01, 5),
        &samples,
        |entry| log.push(entry.clone()),
    )
    .unwrap();
    assert_eq!(log.len(), 60);
    assert!(log.iter().all(|e| e.loss.is_finite()));
    let early: f64 = log[..10].iter().map(|e| e.loss).sum::<f64>() / 10.0;
    let late: f64 = log[50..].iter().map(|e| e.loss).sum::<f64>() / 10.0;
    assert!(
        late < early,
        "loss should trend down: first-10 average {early}, last-10 average {late}"
    );
    // The trained set carries both heads' parameters and the BN buffers.
    assert!(outcome.params.contains("prompter.decoder.classifier.weight"));
    assert!(outcome.params.contains("prompter.aux.classifier.weight"));
    outcome.params.for_each_value(|name, v| {
        assert!(v.iter().all(|x| x.is_finite()), "{name} went non-finite");
    });
}

#[test]
fn prompter_training_is_bit_deterministic() {
    let samples = make_samples(1, 32);
    let run = |log: &mut Vec<String>| -> TrainOutcome {
        train_prompter(
            &tiny_prompter(),
            &PrompterLossWeights::default(),
            &prompter_schedule(8, 2, 0.01, 11),
            &samples,
            |entry| log.push(entry.format()),
        )
        .unwrap()
    };
    let (mut log_a, mut log_b) = (Vec::new(), Vec::new());
    let a = run(&mut log_a);
    let b = run(&mut log_b);
    assert_eq!(log_a, log_b);
    assert_bitwise_equal(&a.params, &b.params, "prompter reruns");
}

/// Shared fixture for fine-tuning tests: an untrained (but initialized)
/// prompter and tiny segmentation block over two synthetic tiles.
struct Fixture {
    pcfg: PrompterConfig,
    scfg: SamConfig,
    prompter_params: ParamSet,
    samples: Vec<Sample>,
}

impl Fixture {
    fn new() -> Self {
        let pcfg = tiny_prompter();
        let mut prompter_params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        init_prompter_params(&pcfg, &mut prompter_params, &mut rng).unwrap();
        Self { pcfg, scfg: tiny_sam(), prompter_params, samples: make_samples(2, 32) }
    }

    fn plan(&self, train: TrainConfig, flags: AblationFlags, head: DecoderHead) -> FinetunePlan<'_> {
        FinetunePlan {
            prompter_cfg: &self.pcfg,
            prompter_params: &self.prompter_params,
            sam_cfg: &self.scfg,
            prompts: PromptSettings { n_fg: 2, n_bg: 2, t_fg: 0.6, t_bg: 0.4 },
            loss: FinetuneLossWeights::default(),
            train,
            flags,
            head,
        }
    }
}

#[test]
fn finetune_freezes_the_image_encoder_and_tunes_the_rest() {
    let fx = Fixture::new();
    let init = init_sam(&fx.scfg, 31);
    let plan = fx.plan(finetune_schedule(5, 2, 7), AblationFlags::default(), DecoderHead::Region);
    let mut steps = 0;
    let outcome = finetune_sam_block(&plan, init.deep_clone(), &fx.samples, |_| steps += 1).unwrap();
    assert_eq!(steps, 5);

    let changed = changed_names(&init, &outcome.params);
    assert!(!changed.is_empty(), "training must move something");
    for name in &changed {
        assert!(!is_frozen_param(name), "frozen parameter {name} changed");
        assert!(
            !name.starts_with("sam.decoder_boundary."),
            "untuned head {name} changed during a region run"
        );
    }
    assert!(changed.iter().any(|n| n.starts_with("sam.decoder_region.")));
    assert!(changed.iter().any(|n| n.starts_with("sam.prompt_encoder.")));
}

#[test]
fn disabling_both_tuning_flags_leaves_the_checkpoint_bit_identical() {
    let fx = Fixture::new();
    let init = init_sam(&fx.scfg, 31);
    let flags = AblationFlags { ftd: false, ftpe: false, mp: true, pp: true };
    let plan = fx.plan(finetune_schedule(3, 2, 7), flags, DecoderHead::Region);
    let mut losses = Vec::new();
    let outcome =
        finetune_sam_block(&plan, init.deep_clone(), &fx.samples, |e| losses.push(e.loss)).unwrap();
    assert_eq!(losses.len(), 3);
    assert!(losses.iter().all(|l| l.is_finite()));
    assert_bitwise_equal(&init, &outcome.params, "no-tuning run");
}

#[test]
fn ablation_flags_scope_which_parameters_move() {
    let fx = Fixture::new();
    let init = init_sam(&fx.scfg, 31);

    // Decoder frozen, prompt encoder tuned.
    let flags = AblationFlags { ftd: false, ftpe: true, mp: true, pp: true };
    let plan = fx.plan(finetune_schedule(2, 2, 7), flags, DecoderHead::Region);
    let outcome = finetune_sam_block(&plan, init.deep_clone(), &fx.samples, |_| {}).unwrap();
    let changed = changed_names(&init, &outcome.params);
    assert!(changed.iter().all(|n| n.starts_with("sam.prompt_encoder.")), "{changed:?}");
    assert!(!changed.is_empty());

    // Decoder tuned, prompt encoder frozen.
    let flags = AblationFlags { ftd: true, ftpe: false, mp: true, pp: true };
    let plan = fx.plan(finetune_schedule(2, 2, 7), flags, DecoderHead::Boundary);
    let outcome = finetune_sam_block(&plan, init.deep_clone(), &fx.samples, |_| {}).unwrap();
    let changed = changed_names(&init, &outcome.params);
    assert!(changed.iter().all(|n| n.starts_with("sam.decoder_boundary.")), "{changed:?}");
    assert!(!changed.is_empty());
}

#[test]
fn prompt_ablations_still_train() {
    let fx = Fixture::new();
    let init = init_sam(&fx.scfg, 31);
    for flags in [
        AblationFlags { mp: false, ..AblationFlags::default() },
        AblationFlags { pp: false, ..AblationFlags::default() },
        AblationFlags { mp: false, pp: false, ..AblationFlags::default() },
    ] {
        let plan = fx.plan(finetune_schedule(2, 2, 7), flags, DecoderHead::Region);
        let mut losses = Vec::new();
        let outcome =
            finetune_sam_block(&plan, init.deep_clone(), &fx.samples, |e| losses.push(e.loss))
                .unwrap();
        assert!(losses.iter().all(|l| l.is_finite()), "flags {flags:?}");
        assert!(!changed_names(&init, &outcome.params).is_empty(), "flags {flags:?}");
    }
}

#[test]
fn finetune_is_bit_deterministic() {
    let fx = Fixture::new();
    let init = init_sam(&fx.scfg, 31);
    let run = |log: &mut Vec<String>| {
        let plan =
            fx.plan(finetune_schedule(3, 2, 13), AblationFlags::default(), DecoderHead::Region);
        finetune_sam_block(&plan, init.deep_clone(), &fx.samples, |e| log.push(e.format())).unwrap()
    };
    let (mut log_a, mut log_b) = (Vec::new(), Vec::new());
    let a = run(&mut log_a);
    let b = run(&mut log_b);
    assert_eq!(log_a, log_b);
    assert_bitwise_equal(&a.params, &b.params, "finetune reruns");
}

#[test]
fn finetune_schedule_counts_steps_and_decays_lr() {
    let fx = Fixture::new();
    let mut samples = fx.samples.clone();
    samples.push(scene_to_sample("tile2", &generate_synthetic_scene(77, 3, 32).unwrap()));
    let init = init_sam(&fx.scfg, 31);
    let plan = fx.plan(finetune_schedule(4, 2, 7), AblationFlags::default(), DecoderHead::Region);
    let mut entries = Vec::new();
    finetune_sam_block(&plan, init, &samples, |e| entries.push((e.step, e.lr))).unwrap();
    // Three samples in batches of two: two steps per epoch, four epochs.
    assert_eq!(entries.len(), 8);
    for (i, (step, _)) in entries.iter().enumerate() {
        assert_eq!(*step, i);
    }
    for pair in entries.windows(2) {
        assert!(pair[1].1 < pair[0].1, "lr must decay: {entries:?}");
    }
    assert_eq!(entries[0].1, 0.001);
}

#[test]
fn trainer_misuse_is_rejected() {
    let fx = Fixture::new();
    let samples = make_samples(1, 32);

    // Wrong phase on either entry point.
    let err = train_prompter(
        &tiny_prompter(),
        &PrompterLossWeights::default(),
        &finetune_schedule(1, 1, 0),
        &samples,
        |_| {},
    );
    assert!(matches!(err, Err(Error::InvalidArgument(_))));

    let plan =
        fx.plan(prompter_schedule(5, 1, 0.01, 0), AblationFlags::default(), DecoderHead::Region);
    let err = finetune_sam_block(&plan, init_sam(&fx.scfg, 1), &samples, |_| {});
    assert!(matches!(err, Err(Error::InvalidArgument(_))));

    // No samples.
    let err = train_prompter(
        &tiny_prompter(),
        &PrompterLossWeights::default(),
        &prompter_schedule(5, 1, 0.01, 0),
        &[],
        |_| {},
    );
    assert!(matches!(err, Err(Error::EmptyInput(_))));

    // Samples that do not match the configured input size.
    let wrong = make_samples(1, 64);
    let err = train_prompter(
        &tiny_prompter(),
        &PrompterLossWeights::default(),
        &prompter_schedule(5, 1, 0.01, 0),
        &wrong,
        |_| {},
    );
    assert!(matches!(err, Err(Error::ShapeError(_))));

    // Batch size zero.
    let err = train_prompter(
        &tiny_prompter(),
        &PrompterLossWeights::default(),
        &prompter_schedule(5, 0, 0.01, 0),
        &samples,
        |_| {},
    );
    assert!(matches!(err, Err(Error::InvalidArgument(_))));
}
