//! Configuration parsing: defaults, overrides, schema strictness, and the
//! mapping into typed component configs.

use fabseg::config::PipelineConfig;
use fabseg::trainer::{Duration, OptimizerKind, Phase};
use fabseg::Error;

#[test]
fn empty_toml_yields_the_documented_defaults() {
    let cfg = PipelineConfig::from_toml("").unwrap();
    assert_eq!(cfg, PipelineConfig::default());

    assert_eq!(cfg.data.tile, 256);
    assert_eq!(cfg.data.split, [0.7, 0.15, 0.15]);
    assert_eq!(cfg.data.lo, 0.0);
    assert_eq!(cfg.data.hi, 3000.0);

    assert_eq!(cfg.prompter.backbone_channels, vec![16, 32, 64, 128]);
    assert_eq!(cfg.prompter.aspp_rates, vec![1, 6, 12, 18]);

    assert_eq!(cfg.sam.patch_size, 16);
    assert_eq!(cfg.sam.n_fg, 4);
    assert_eq!(cfg.sam.n_bg, 4);
    assert_eq!(cfg.sam.t_fg, 0.7);
    assert_eq!(cfg.sam.t_bg, 0.3);

    assert_eq!(cfg.loss.w_m, 1.0);
    assert_eq!(cfg.loss.w_a, 0.4);
    assert_eq!(cfg.loss.w_d, 1.0);
    assert_eq!(cfg.loss.w_f, 1.0);
    assert_eq!(cfg.loss.alpha, 0.25);
    assert_eq!(cfg.loss.gamma, 2.0);

    assert_eq!(cfg.train.prompter.batch_size, 8);
    assert_eq!(cfg.train.prompter.total_iterations, 80_000);
    assert_eq!(cfg.train.prompter.lr0, 0.004);
    assert_eq!(cfg.train.prompter.momentum, 0.9);
    assert_eq!(cfg.train.prompter.power, 0.9);
    assert_eq!(cfg.train.prompter.weight_decay, 1e-4);

    assert_eq!(cfg.train.finetune.batch_size, 4);
    assert_eq!(cfg.train.finetune.total_epochs, 20);
    assert_eq!(cfg.train.finetune.lr0, 0.0003);
    assert_eq!(cfg.train.finetune.beta1, 0.9);
    assert_eq!(cfg.train.finetune.beta2, 0.999);
    assert_eq!(cfg.train.finetune.eps, 1e-8);

    let flags = cfg.ablation_flags();
    assert!(flags.ftd && flags.ftpe && flags.mp && flags.pp);
}

#[test]
fn toml_roundtrip_is_lossless() {
    let mut cfg = PipelineConfig::default();
    cfg.data.tile = 64;
    cfg.sam.patch_size = 8;
    cfg.train.prompter.total_iterations = 500;
    cfg.ablation.pp = false;
    let text = cfg.to_toml();
    let back = PipelineConfig::from_toml(&text).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn unknown_keys_are_schema_errors() {
    for text in [
        "[data]\nbogus = 1",
        "[sam]\npatchsize = 16",
        "[nonsense]\nx = 1",
        "[train.prompter]\nlearning_rate = 0.1",
    ] {
        assert!(
            matches!(PipelineConfig::from_toml(text), Err(Error::SchemaError(_))),
            "{text:?} should be rejected"
        );
    }
}

#[test]
fn type_errors_are_schema_errors() {
    let text = "[data]\ntile = \"large\"";
    assert!(matches!(PipelineConfig::from_toml(text), Err(Error::SchemaError(_))));
}

#[test]
fn overrides_reach_the_component_configs() {
    let text = r#"
[data]
tile = 64

[prompter]
backbone_channels = [8, 16]
aspp_rates = [1, 6]
aspp_channels = 16
decoder_channels = 16

[sam]
patch_size = 8
embed_dim = 32
encoder_depth = 2
encoder_heads = 2
prompt_dim = 16
decoder_depth = 1
n_fg = 2
n_bg = 3

[train.prompter]
total_iterations = 300
batch_size = 2

[train.finetune]
total_epochs = 5

[ablation]
ftd = false
ftpe = true
mp = true
pp = false
"#;
    let cfg = PipelineConfig::from_toml(text).unwrap();

    let pcfg = cfg.prompter_config();
    assert_eq!(pcfg.input_size, (64, 64));
    assert_eq!(pcfg.backbone_channels, vec![8, 16]);
    assert_eq!(pcfg.num_classes, 2);

    let scfg = cfg.sam_config();
    assert_eq!(scfg.input_size, (64, 64));
    assert_eq!(scfg.patch_size, 8);
    assert_eq!(scfg.embed_dim, 32);

    let prompts = cfg.prompt_settings();
    assert_eq!((prompts.n_fg, prompts.n_bg), (2, 3));

    let tp = cfg.prompter_train_config();
    assert_eq!(tp.phase, Phase::Prompter);
    assert_eq!(tp.duration, Duration::Iterations(300));
    assert_eq!(tp.batch_size, 2);
    assert!(matches!(tp.optimizer, OptimizerKind::Sgd { momentum } if momentum == 0.9));

    let tf = cfg.finetune_train_config();
    assert_eq!(tf.phase, Phase::Finetune);
    assert_eq!(tf.duration, Duration::Epochs(5));
    assert!(matches!(
        tf.optimizer,
        OptimizerKind::Adam { beta1, beta2, eps } if beta1 == 0.9 && beta2 == 0.999 && eps == 1e-8
    ));

    let flags = cfg.ablation_flags();
    assert!(!flags.ftd && flags.ftpe && flags.mp && !flags.pp);
}

#[test]
fn invalid_values_are_rejected() {
    let cases = [
        ("[data]\nlo = 10.0\nhi = 5.0", "window"),
        ("[data]\ntile = 16", "tile"),
        ("[data]\nsplit = [0.5, 0.2, 0.2]", "split"),
        ("[sam]\nt_fg = 0.2\nt_bg = 0.5", "thresholds"),
        ("[train.prompter]\nlr0 = 0.0", "lr0"),
        ("[train.prompter]\ntotal_iterations = 0", "duration"),
        ("[train.finetune]\nbeta1 = 1.5", "beta"),
        ("[sam]\npatch_size = 12", "patch"),
    ];
    for (text, what) in cases {
        assert!(
            PipelineConfig::from_toml(text).is_err(),
            "invalid {what} config should be rejected: {text:?}"
        );
    }
}

#[test]
fn loss_builders_carry_the_weights() {
    let cfg = PipelineConfig::from_toml("[loss]\nw_a = 0.7\ngamma = 3.0").unwrap();
    assert_eq!(cfg.prompter_loss_weights().w_a, 0.7);
    assert_eq!(cfg.prompter_loss_weights().w_m, 1.0);
    assert_eq!(cfg.finetune_loss_weights().gamma, 3.0);
    assert_eq!(cfg.finetune_loss_weights().alpha, 0.25);
}
