//! Pipeline configuration: one TOML file describes data preparation, both
//! network shapes, loss weights, both training phases, and the component
//! switches. Every field has a default, so an empty file is a valid config;
//! unknown keys are rejected rather than silently ignored.

use crate::error::{Error, Result};
use crate::losses::{FinetuneLossWeights, PrompterLossWeights};
use crate::prompter::PrompterConfig;
use crate::sam::SamConfig;
use crate::trainer::{
    AblationFlags, Duration, OptimizerKind, Phase, PromptSettings, TrainConfig,
};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Reflectance-window and tiling parameters for raster preparation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Reflectance mapped to 0.
    pub lo: f64,
    /// Reflectance mapped to 1 (values outside the window are clipped).
    pub hi: f64,
    /// Side length of the square tiles cut from each scene.
    pub tile: usize,
    /// Train/validation/test fractions; must sum to 1.
    pub split: [f64; 3],
    /// Seed for the scene-level split shuffle.
    pub seed: u64,
    /// Training manifest path, resolved relative to the config file when
    /// not absolute; commands accept `--manifest` to override it.
    pub manifest: String,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            lo: 0.0,
            hi: 3000.0,
            tile: 256,
            split: [0.7, 0.15, 0.15],
            seed: 17,
            manifest: String::new(),
        }
    }
}

/// Prompter architecture knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrompterSection {
    pub backbone_channels: Vec<usize>,
    pub aspp_rates: Vec<usize>,
    pub aspp_channels: usize,
    pub decoder_channels: usize,
}

impl Default for PrompterSection {
    fn default() -> Self {
        let p = PrompterConfig::default();
        Self {
            backbone_channels: p.backbone_channels,
            aspp_rates: p.aspp_rates,
            aspp_channels: p.aspp_channels,
            decoder_channels: p.decoder_channels,
        }
    }
}

/// Segmentation-block architecture and prompt-sampling knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamSection {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub encoder_depth: usize,
    pub encoder_heads: usize,
    pub prompt_dim: usize,
    pub decoder_depth: usize,
    /// Foreground points sampled per image.
    pub n_fg: usize,
    /// Background points sampled per image.
    pub n_bg: usize,
    /// Probability strictly above this is foreground-eligible.
    pub t_fg: f64,
    /// Probability strictly below this is background-eligible.
    pub t_bg: f64,
}

impl Default for SamSection {
    fn default() -> Self {
        let s = SamConfig::default();
        let p = PromptSettings::default();
        Self {
            patch_size: s.patch_size,
            embed_dim: s.embed_dim,
            encoder_depth: s.encoder_depth,
            encoder_heads: s.encoder_heads,
            prompt_dim: s.prompt_dim,
            decoder_depth: s.decoder_depth,
            n_fg: p.n_fg,
            n_bg: p.n_bg,
            t_fg: p.t_fg,
            t_bg: p.t_bg,
        }
    }
}

/// Loss weights for both phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    /// Weight of the main cross-entropy term.
    pub w_m: f64,
    /// Weight of the auxiliary cross-entropy term.
    pub w_a: f64,
    /// Weight of the Dice term.
    pub w_d: f64,
    /// Weight of the focal term.
    pub w_f: f64,
    /// Focal class-balance factor.
    pub alpha: f64,
    /// Focal focusing exponent.
    pub gamma: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let p = PrompterLossWeights::default();
        let f = FinetuneLossWeights::default();
        Self { w_m: p.w_m, w_a: p.w_a, w_d: f.w_d, w_f: f.w_f, alpha: f.alpha, gamma: f.gamma }
    }
}

/// Phase-1 schedule (SGD over iterations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrompterTrainSection {
    pub batch_size: usize,
    pub total_iterations: usize,
    pub lr0: f64,
    pub power: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for PrompterTrainSection {
    fn default() -> Self {
        Self {
            batch_size: 8,
            total_iterations: 80_000,
            lr0: 0.004,
            power: 0.9,
            weight_decay: 1e-4,
            momentum: 0.9,
            seed: 42,
        }
    }
}

/// Phase-2 schedule (Adam over epochs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneTrainSection {
    pub batch_size: usize,
    pub total_epochs: usize,
    pub lr0: f64,
    pub power: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for FinetuneTrainSection {
    fn default() -> Self {
        Self {
            batch_size: 4,
            total_epochs: 20,
            lr0: 0.0003,
            power: 0.9,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 43,
        }
    }
}

/// Both training phases.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub prompter: PrompterTrainSection,
    pub finetune: FinetuneTrainSection,
}

/// The whole pipeline's configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataSection,
    pub prompter: PrompterSection,
    pub sam: SamSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub ablation: AblationFlags,
}

impl PipelineConfig {
    /// Parses a TOML string; unknown keys or wrong types are schema errors.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::SchemaError(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and parses a TOML config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::DataError(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Serializes back to TOML (used for checkpoint snapshots).
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.data.hi > self.data.lo) {
            return Err(Error::InvalidRange(format!(
                "reflectance window needs hi > lo, got [{}, {}]",
                self.data.lo, self.data.hi
            )));
        }
        if self.data.tile < 32 {
            return Err(Error::InvalidArgument(format!(
                "tile size must be at least 32, got {}",
                self.data.tile
            )));
        }
        let split_sum: f64 = self.data.split.iter().sum();
        if self.data.split.iter().any(|&f| !(0.0..=1.0).contains(&f))
            || (split_sum - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidArgument(format!(
                "split fractions must lie in [0, 1] and sum to 1, got {:?}",
                self.data.split
            )));
        }
        self.prompter_config().validate()?;
        self.sam_config().validate()?;
        self.prompter_loss_weights().validate()?;
        self.finetune_loss_weights().validate()?;
        self.prompter_train_config().validate()?;
        self.finetune_train_config().validate()?;
        crate::prompt::validate_thresholds(self.sam.t_fg, self.sam.t_bg)?;
        Ok(())
    }

    pub fn prompter_config(&self) -> PrompterConfig {
        PrompterConfig {
            backbone_channels: self.prompter.backbone_channels.clone(),
            aspp_rates: self.prompter.aspp_rates.clone(),
            aspp_channels: self.prompter.aspp_channels,
            decoder_channels: self.prompter.decoder_channels,
            num_classes: 2,
            input_size: (self.data.tile, self.data.tile),
        }
    }

    pub fn sam_config(&self) -> SamConfig {
        SamConfig {
            input_size: (self.data.tile, self.data.tile),
            patch_size: self.sam.patch_size,
            embed_dim: self.sam.embed_dim,
            encoder_depth: self.sam.encoder_depth,
            encoder_heads: self.sam.encoder_heads,
            prompt_dim: self.sam.prompt_dim,
            decoder_depth: self.sam.decoder_depth,
        }
    }

    pub fn prompt_settings(&self) -> PromptSettings {
        PromptSettings {
            n_fg: self.sam.n_fg,
            n_bg: self.sam.n_bg,
            t_fg: self.sam.t_fg,
            t_bg: self.sam.t_bg,
        }
    }

    pub fn prompter_loss_weights(&self) -> PrompterLossWeights {
        PrompterLossWeights { w_m: self.loss.w_m, w_a: self.loss.w_a }
    }

    pub fn finetune_loss_weights(&self) -> FinetuneLossWeights {
        FinetuneLossWeights {
            w_d: self.loss.w_d,
            w_f: self.loss.w_f,
            alpha: self.loss.alpha,
            gamma: self.loss.gamma,
        }
    }

    pub fn prompter_train_config(&self) -> TrainConfig {
        let t = &self.train.prompter;
        TrainConfig {
            phase: Phase::Prompter,
            optimizer: OptimizerKind::Sgd { momentum: t.momentum },
            batch_size: t.batch_size,
            duration: Duration::Iterations(t.total_iterations),
            lr0: t.lr0,
            power: t.power,
            weight_decay: t.weight_decay,
            seed: t.seed,
        }
    }

    pub fn finetune_train_config(&self) -> TrainConfig {
        let t = &self.train.finetune;
        TrainConfig {
            phase: Phase::Finetune,
            optimizer: OptimizerKind::Adam { beta1: t.beta1, beta2: t.beta2, eps: t.eps },
            batch_size: t.batch_size,
            duration: Duration::Epochs(t.total_epochs),
            lr0: t.lr0,
            power: t.power,
            weight_decay: t.weight_decay,
            seed: t.seed,
        }
    }

    pub fn ablation_flags(&self) -> AblationFlags {
        self.ablation
    }
}
