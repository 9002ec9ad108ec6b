//! Pipeline safety rails: checkpoint compatibility checks when assembling
//! the two-stage predictor, and strict pairing rules during evaluation.

use fabseg::config::PipelineConfig;
use fabseg::pipeline::{load_predictor, run_evaluate, run_finetune, run_synth, run_train_prompter};
use fabseg::sam::DecoderHead;
use fabseg::trainer::AblationFlags;
use fabseg::Error;
use std::path::{Path, PathBuf};
use tempfile::TempDir;

const TOY_CONFIG: &str = "\
[data]
tile = 32

[prompter]
backbone_channels = [4, 8]
aspp_rates = [1, 2]
aspp_channels = 8
decoder_channels = 8

[sam]
patch_size = 8
embed_dim = 16
encoder_depth = 1
encoder_heads = 2
prompt_dim = 16
decoder_depth = 1
n_fg = 2
n_bg = 2

[train.prompter]
batch_size = 2
total_iterations = 10
lr0 = 0.01

[train.finetune]
batch_size = 2
total_epochs = 1
lr0 = 0.001
";

struct Fixture {
    _dir: TempDir,
    root: PathBuf,
    cfg: PipelineConfig,
    manifest: PathBuf,
    prompter: PathBuf,
    region: PathBuf,
}

/// Synthesizes scenes, trains a toy prompter, and fine-tunes the region
/// head once, leaving the boundary head to each test's scenario.
fn fixture() -> Fixture {
    let dir = TempDir::new().expect("temp dir");
    let root = dir.path().to_path_buf();
    let cfg = PipelineConfig::from_toml(TOY_CONFIG).expect("toy config parses");
    let manifest = root.join("data/manifest.txt");
    run_synth(3, 5, 32, &root.join("data")).expect("scenes synthesized");
    let prompter = root.join("prompter.ckpt");
    run_train_prompter(&cfg, &manifest, &prompter).expect("prompter trains");
    let region = root.join("region.ckpt");
    run_finetune(
        &cfg,
        DecoderHead::Region,
        AblationFlags::default(),
        &prompter,
        &manifest,
        &region,
    )
    .expect("region head fine-tunes");
    Fixture { _dir: dir, root, cfg, manifest, prompter, region }
}

fn finetune_boundary(f: &Fixture, cfg: &PipelineConfig, out: &Path) {
    run_finetune(
        cfg,
        DecoderHead::Boundary,
        AblationFlags::default(),
        &f.prompter,
        &f.manifest,
        out,
    )
    .expect("boundary head fine-tunes");
}

#[test]
fn predictor_accepts_checkpoints_from_one_run() {
    let f = fixture();
    let boundary = f.root.join("boundary.ckpt");
    finetune_boundary(&f, &f.cfg, &boundary);
    load_predictor(&f.prompter, &f.region, &boundary).expect("matching checkpoints assemble");
}

#[test]
fn predictor_rejects_mismatched_architectures() {
    let f = fixture();
    let mut other = f.cfg.clone();
    other.sam.embed_dim = 32;
    let boundary = f.root.join("boundary_wide.ckpt");
    finetune_boundary(&f, &other, &boundary);
    let err = match load_predictor(&f.prompter, &f.region, &boundary) {
        Ok(_) => panic!("mismatched architectures must not assemble"),
        Err(e) => e,
    };
    assert!(
        matches!(err, Error::SchemaError(_)),
        "architecture mismatch must be a schema error, got {err}"
    );
}

#[test]
fn predictor_rejects_divergent_frozen_halves() {
    let f = fixture();
    // Same architecture, different initialization seed: the frozen encoder
    // is a different physical network, so the halves cannot be merged.
    let mut other = f.cfg.clone();
    other.train.finetune.seed += 1;
    let boundary = f.root.join("boundary_reseeded.ckpt");
    finetune_boundary(&f, &other, &boundary);
    let err = match load_predictor(&f.prompter, &f.region, &boundary) {
        Ok(_) => panic!("divergent frozen halves must not assemble"),
        Err(e) => e,
    };
    let msg = err.to_string();
    assert!(
        matches!(err, Error::SchemaError(_)) && msg.contains("frozen"),
        "divergent frozen halves must be refused, got {msg}"
    );
}

#[test]
fn prompter_checkpoint_must_match_the_configured_architecture() {
    let f = fixture();
    let mut other = f.cfg.clone();
    other.prompter.decoder_channels = 16;
    let err = run_finetune(
        &other,
        DecoderHead::Boundary,
        AblationFlags::default(),
        &f.prompter,
        &f.manifest,
        &f.root.join("never.ckpt"),
    )
    .unwrap_err();
    assert!(
        matches!(err, Error::SchemaError(_)),
        "prompter architecture mismatch must be a schema error, got {err}"
    );
}

#[test]
fn evaluate_requires_every_prediction_to_have_ground_truth() {
    let f = fixture();
    // Score the synthetic data against a ground-truth folder that lacks one
    // of its files.
    let gt = f.root.join("gt");
    for sub in ["region", "boundary"] {
        std::fs::create_dir_all(gt.join(sub)).expect("gt dirs");
        for i in 0..3 {
            let name = format!("scene_{i:03}.png");
            if sub == "boundary" && i == 2 {
                continue; // withhold one ground-truth mask
            }
            std::fs::copy(f.root.join("data").join(sub).join(&name), gt.join(sub).join(&name))
                .expect("gt copied");
        }
    }
    let err = run_evaluate(&f.root.join("data"), &gt, &f.root.join("report.csv")).unwrap_err();
    assert!(
        matches!(err, Error::DataError(_)),
        "missing ground truth must be a data error, got {err}"
    );
}
