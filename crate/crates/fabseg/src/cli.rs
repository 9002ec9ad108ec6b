//! Command-line front end: one subcommand per pipeline stage, plus the
//! numerical verification suite. All diagnostics go to stderr; data goes
//! to the declared output paths; the exit code is zero iff no error.

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::pipeline;
use crate::sam::DecoderHead;
use crate::trainer::AblationFlags;
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "fabseg",
    about = "Farmland parcel delineation: prompter-guided two-stage segmentation",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate labeled synthetic scenes (images, masks, manifest).
    Synth {
        /// Number of scenes to generate.
        #[arg(long)]
        n: usize,
        /// Base seed; each scene derives its own stream from it.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Side length of each square scene in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render raw multi-band scenes to 8-bit tiles and split them.
    Prepare {
        /// Manifest of raw scenes (image, region mask, boundary mask).
        #[arg(long)]
        manifest: PathBuf,
        /// Reflectance mapped to black.
        #[arg(long, default_value_t = 0)]
        lo: i64,
        /// Reflectance mapped to white (values above are clipped).
        #[arg(long, default_value_t = 3000)]
        hi: i64,
        /// Square tile side length.
        #[arg(long, default_value_t = 256)]
        tile: usize,
        /// Train,val,test fractions (comma separated, summing to 1).
        #[arg(long, default_value = "0.7,0.15,0.15", value_parser = parse_split)]
        split: (f64, f64, f64),
        /// Seed for the scene-level shuffle.
        #[arg(long, default_value_t = 17)]
        seed: u64,
        /// Output directory for tiles and split manifests.
        #[arg(long)]
        out: PathBuf,
    },
    /// Phase 1: train the prompter network from scratch.
    TrainPrompter {
        /// Pipeline config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Training manifest; overrides the config's `data.manifest`.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Phase 2: fine-tune one decoder head of the segmentation block.
    Finetune {
        /// Pipeline config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Which decoder head to fine-tune.
        #[arg(long, value_parser = ["region", "boundary"])]
        head: String,
        /// Phase-1 prompter checkpoint.
        #[arg(long)]
        prompter_ckpt: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Training manifest; overrides the config's `data.manifest`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Keep the decoder frozen (skip fine-tuning it).
        #[arg(long)]
        no_ftd: bool,
        /// Keep the prompt encoder frozen.
        #[arg(long)]
        no_ftpe: bool,
        /// Drop the mask prompt (use the learned no-mask embedding).
        #[arg(long)]
        no_mp: bool,
        /// Drop the point prompts.
        #[arg(long)]
        no_pp: bool,
    },
    /// Run the two-stage predictor over a directory of tiles.
    Predict {
        /// Phase-1 prompter checkpoint.
        #[arg(long)]
        prompter_ckpt: PathBuf,
        /// Fine-tuned region-head checkpoint.
        #[arg(long)]
        sam_ckpt_region: PathBuf,
        /// Fine-tuned boundary-head checkpoint.
        #[arg(long)]
        sam_ckpt_boundary: PathBuf,
        /// Directory of RGB tile PNGs.
        #[arg(long)]
        images: PathBuf,
        /// Output directory (region/, boundary/, parcels/, prompter/).
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted masks against ground truth.
    Evaluate {
        /// Prediction directory (with region/ and boundary/ subdirs).
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth directory (same layout).
        #[arg(long)]
        gt: PathBuf,
        /// Report file to write (CSV, percentages).
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the five-row component study and emit its comparison table.
    Ablate {
        /// Pipeline config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output table path (CSV, percentages).
        #[arg(long)]
        out_table: PathBuf,
        /// Training manifest; overrides the config's `data.manifest`.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run the numerical verification suite (oracles and fixtures).
    Verify,
}

fn parse_split(raw: &str) -> std::result::Result<(f64, f64, f64), String> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated fractions, got {raw:?}"));
    }
    let mut vals = [0.0f64; 3];
    for (slot, part) in vals.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<f64>()
            .map_err(|_| format!("{part:?} is not a number"))?;
        if !(0.0..=1.0).contains(slot) {
            return Err(format!("fraction {slot} is outside [0, 1]"));
        }
    }
    let total: f64 = vals.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(format!("fractions must sum to 1, got {total}"));
    }
    Ok((vals[0], vals[1], vals[2]))
}

/// Resolves the training manifest: an explicit flag wins; otherwise the
/// config's `data.manifest`, taken relative to the config file.
fn resolve_manifest(
    config_path: &Path,
    cfg: &PipelineConfig,
    flag: Option<PathBuf>,
) -> Result<PathBuf> {
    if let Some(path) = flag {
        return Ok(path);
    }
    if cfg.data.manifest.is_empty() {
        return Err(Error::UsageError(
            "no training manifest: pass --manifest or set data.manifest in the config".into(),
        ));
    }
    let manifest = PathBuf::from(&cfg.data.manifest);
    if manifest.is_absolute() {
        return Ok(manifest);
    }
    let base = config_path.parent().unwrap_or_else(|| Path::new(""));
    Ok(base.join(manifest))
}

/// Executes one parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { n, seed, size, out } => pipeline::run_synth(n, seed, size, &out),
        Command::Prepare { manifest, lo, hi, tile, split, seed, out } => {
            pipeline::run_prepare(&manifest, lo, hi, tile, split, seed, &out)
        }
        Command::TrainPrompter { config, out, manifest } => {
            let cfg = PipelineConfig::load(&config)?;
            let manifest = resolve_manifest(&config, &cfg, manifest)?;
            pipeline::run_train_prompter(&cfg, &manifest, &out)
        }
        Command::Finetune {
            config,
            head,
            prompter_ckpt,
            out,
            manifest,
            no_ftd,
            no_ftpe,
            no_mp,
            no_pp,
        } => {
            let cfg = PipelineConfig::load(&config)?;
            let manifest = resolve_manifest(&config, &cfg, manifest)?;
            let head = DecoderHead::parse(&head)?;
            let base = cfg.ablation_flags();
            let flags = AblationFlags {
                ftd: base.ftd && !no_ftd,
                ftpe: base.ftpe && !no_ftpe,
                mp: base.mp && !no_mp,
                pp: base.pp && !no_pp,
            };
            pipeline::run_finetune(&cfg, head, flags, &prompter_ckpt, &manifest, &out)
        }
        Command::Predict { prompter_ckpt, sam_ckpt_region, sam_ckpt_boundary, images, out } => {
            pipeline::run_predict(&prompter_ckpt, &sam_ckpt_region, &sam_ckpt_boundary, &images, &out)
        }
        Command::Evaluate { pred, gt, report } => {
            pipeline::run_evaluate(&pred, &gt, &report).map(|_| ())
        }
        Command::Ablate { config, out_table, manifest } => {
            let cfg = PipelineConfig::load(&config)?;
            let manifest = resolve_manifest(&config, &cfg, manifest)?;
            pipeline::run_ablate(&cfg, &manifest, &out_table)
        }
        Command::Verify => {
            let results = crate::verification::run_verification_suite();
            let mut failed = 0usize;
            for check in &results {
                println!("{check}");
                if !check.pass {
                    failed += 1;
                }
            }
            if failed > 0 {
                return Err(Error::InvalidState(format!(
                    "{failed} of {} verification checks failed",
                    results.len()
                )));
            }
            Ok(())
        }
    }
}
