//! Coarse segmentation network that sources the prompts.
//!
//! An encoder-decoder in the Deeplabv3+ mould: a small residual backbone
//! (strided stages, final stage dilated instead of strided), an atrous
//! spatial pyramid pooling block whose dilated branches are depthwise
//! separable, and a decoder that fuses a low-level backbone feature with the
//! upsampled pyramid output before classifying every pixel as farmland or
//! background. A deep-supervision auxiliary head taps the penultimate
//! backbone stage during training only.
//!
//! Parameters live under the `prompter.*` name prefix.

use crate::error::{Error, Result};
use crate::nn::{point_spec, spec3x3, Apply, Registrar};
use fabseg_autograd::{bilinear_resize, global_avg_pool, ops, Binder, Conv2dSpec, ParamSet, Tensor};
use rand_chacha::ChaCha8Rng;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PrompterConfig {
    /// Output width of each residual backbone stage; the stage count is the
    /// list length (at least 2: one low-level tap stage plus one dilated
    /// output stage).
    pub backbone_channels: Vec<usize>,
    /// Pyramid branch dilation rates; rate 1 denotes the plain 1x1 branch.
    pub aspp_rates: Vec<usize>,
    /// Channels of every pyramid branch and of the fused pyramid output.
    pub aspp_channels: usize,
    /// Channels of the decoder's fused feature.
    pub decoder_channels: usize,
    /// Always 2: background and farmland.
    pub num_classes: usize,
    /// Expected input spatial shape (height, width).
    pub input_size: (usize, usize),
}

impl Default for PrompterConfig {
    fn default() -> Self {
        Self {
            backbone_channels: vec![16, 32, 64, 128],
            aspp_rates: vec![1, 6, 12, 18],
            aspp_channels: 64,
            decoder_channels: 64,
            num_classes: 2,
            input_size: (64, 64),
        }
    }
}

impl PrompterConfig {
    /// Total downsampling factor: the stem plus every strided stage halves
    /// the resolution once; the final stage is dilated, not strided.
    pub fn output_stride(&self) -> usize {
        1 << self.backbone_channels.len()
    }

    /// Width of the reduced low-level feature in the decoder.
    pub fn low_level_channels(&self) -> usize {
        (self.decoder_channels / 2).max(4)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes != 2 {
            return Err(Error::InvalidArgument(format!(
                "prompter is a binary segmenter; num_classes must be 2, got {}",
                self.num_classes
            )));
        }
        if self.backbone_channels.len() < 2 {
            return Err(Error::InvalidArgument(
                "backbone needs at least 2 stages (low-level tap + dilated output stage)".into(),
            ));
        }
        if self.backbone_channels.iter().any(|&c| c == 0)
            || self.aspp_channels == 0
            || self.decoder_channels == 0
        {
            return Err(Error::InvalidArgument("all channel widths must be >= 1".into()));
        }
        if self.aspp_rates.is_empty() || self.aspp_rates.iter().any(|&r| r == 0) {
            return Err(Error::InvalidArgument(
                "aspp_rates must be a non-empty list of positive integers".into(),
            ));
        }
        let mut sorted = self.aspp_rates.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.aspp_rates.len() {
            return Err(Error::InvalidArgument("aspp_rates must be distinct".into()));
        }
        let stride = self.output_stride();
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % stride != 0 || w % stride != 0 {
            return Err(Error::InvalidArgument(format!(
                "input size {h}x{w} must be a positive multiple of the output stride {stride}"
            )));
        }
        Ok(())
    }
}

/// Forward result: per-pixel class logits `(N, 2, H, W)`, plus the
/// deep-supervision head's logits during training.
#[derive(Debug, Clone)]
pub struct PrompterOutput {
    pub main_logits: Tensor,
    pub aux_logits: Option<Tensor>,
}

fn stage_plan(cfg: &PrompterConfig, index: usize) -> (usize, usize) {
    // (stride, dilation): every stage halves resolution except the last,
    // which trades its stride for dilation to keep receptive-field growth.
    if index + 1 == cfg.backbone_channels.len() {
        (1, 2)
    } else {
        (2, 1)
    }
}

/// Registers all `prompter.*` parameters for `cfg` into `set`.
pub fn init_prompter_params(cfg: &PrompterConfig, set: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<()> {
    cfg.validate()?;
    let mut reg = Registrar::new(set, rng);
    let chans = &cfg.backbone_channels;
    reg.conv_bn("prompter.stem", 3, chans[0], 3);
    let mut cin = chans[0];
    for (i, &cout) in chans.iter().enumerate() {
        let name = format!("prompter.stage{}", i + 1);
        let (stride, _) = stage_plan(cfg, i);
        reg.conv_bn(&format!("{name}.c1"), cin, cout, 3);
        reg.conv_bn(&format!("{name}.c2"), cout, cout, 3);
        if stride != 1 || cin != cout {
            reg.conv_bn(&format!("{name}.down"), cin, cout, 1);
        }
        cin = cout;
    }
    let top = *chans.last().expect("validated non-empty");
    for (i, &rate) in cfg.aspp_rates.iter().enumerate() {
        let name = format!("prompter.aspp.branch{i}");
        if rate == 1 {
            reg.conv_bn(&format!("{name}.proj"), top, cfg.aspp_channels, 1);
        } else {
            reg.depthwise_bn(&format!("{name}.dw"), top, 3);
            reg.conv_bn(&format!("{name}.pw"), top, cfg.aspp_channels, 1);
        }
    }
    reg.conv_bn("prompter.aspp.pool", top, cfg.aspp_channels, 1);
    let cat = cfg.aspp_channels * (cfg.aspp_rates.len() + 1);
    reg.conv_bn("prompter.aspp.project", cat, cfg.aspp_channels, 1);

    reg.conv_bn("prompter.decoder.low", chans[0], cfg.low_level_channels(), 1);
    reg.conv_bn(
        "prompter.decoder.fuse",
        cfg.aspp_channels + cfg.low_level_channels(),
        cfg.decoder_channels,
        3,
    );
    reg.conv("prompter.decoder.classifier", cfg.num_classes, cfg.decoder_channels, 1, true);

    let aux_in = chans[chans.len() - 2];
    reg.conv_bn("prompter.aux", aux_in, aux_in, 3);
    reg.conv("prompter.aux.classifier", cfg.num_classes, aux_in, 1, true);
    Ok(())
}

fn residual_block(a: &Apply<'_, '_>, name: &str, x: &Tensor, stride: usize, dilation: usize, down: bool) -> Tensor {
    let out = a.conv_bn_relu(&format!("{name}.c1"), x, spec3x3(stride, dilation));
    let out = a.conv_bn(&format!("{name}.c2"), &out, spec3x3(1, dilation));
    let skip = if down {
        a.conv_bn(&format!("{name}.down"), x, Conv2dSpec::stride(stride))
    } else {
        x.clone()
    };
    ops::relu(&ops::add(&out, &skip))
}

fn aspp(a: &Apply<'_, '_>, cfg: &PrompterConfig, x: &Tensor) -> Tensor {
    let (gh, gw) = (x.shape()[2], x.shape()[3]);
    let top = *cfg.backbone_channels.last().expect("validated non-empty");
    let mut branches = Vec::with_capacity(cfg.aspp_rates.len() + 1);
    for (i, &rate) in cfg.aspp_rates.iter().enumerate() {
        let name = format!("prompter.aspp.branch{i}");
        let t = if rate == 1 {
            a.conv_bn_relu(&format!("{name}.proj"), x, point_spec())
        } else {
            let dw_spec = Conv2dSpec { stride: 1, padding: rate, dilation: rate, groups: top };
            let dw = a.conv_bn_relu(&format!("{name}.dw"), x, dw_spec);
            a.conv_bn_relu(&format!("{name}.pw"), &dw, point_spec())
        };
        branches.push(t);
    }
    let pooled = a.conv_bn_relu("prompter.aspp.pool", &global_avg_pool(x), point_spec());
    branches.push(bilinear_resize(&pooled, gh, gw));
    a.conv_bn_relu("prompter.aspp.project", &ops::concat(1, &branches), point_spec())
}

/// Deep-supervision head on the penultimate backbone stage:
/// conv3x3 -> batch norm -> conv1x1 -> bilinear upsample to the input size.
/// Training-only by contract.
pub fn aux_head_forward(
    cfg: &PrompterConfig,
    binder: &Binder<'_>,
    features: &Tensor,
    training: bool,
) -> Result<Tensor> {
    if !training {
        return Err(Error::InvalidState(
            "auxiliary head is a training-time construct; inference must not call it".into(),
        ));
    }
    let a = Apply { binder, training };
    let t = a.conv_bn("prompter.aux", features, spec3x3(1, 1));
    let t = a.conv("prompter.aux.classifier", &t, point_spec(), true);
    let (h, w) = cfg.input_size;
    Ok(bilinear_resize(&t, h, w))
}

/// Full forward pass over a normalized image batch `(N, 3, H, W)` with
/// values in `[0, 1]`. Produces main logits at input resolution and, in
/// training mode, the auxiliary head's logits.
pub fn prompter_forward(
    cfg: &PrompterConfig,
    binder: &Binder<'_>,
    image: &Tensor,
    training: bool,
) -> Result<PrompterOutput> {
    cfg.validate()?;
    let shape = image.shape();
    let (h, w) = cfg.input_size;
    if shape.len() != 4 || shape[1] != 3 || shape[2] != h || shape[3] != w {
        return Err(Error::ShapeError(format!(
            "expected image batch (N, 3, {h}, {w}), got {shape:?}"
        )));
    }
    if image.value().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidRange(
            "image values must be normalized to [0, 1]".into(),
        ));
    }
    let mut bad_param = None;
    binder.param_set().for_each_value(|name, value| {
        if bad_param.is_none() && value.iter().any(|v| !v.is_finite()) {
            bad_param = Some(name.to_string());
        }
    });
    if let Some(name) = bad_param {
        return Err(Error::NumericalError(format!("parameter {name} contains non-finite values")));
    }

    let a = Apply { binder, training };
    let mut t = a.conv_bn_relu("prompter.stem", image, spec3x3(2, 1));
    let mut cin = cfg.backbone_channels[0];
    let mut low_level = None;
    let mut aux_features = None;
    let stages = cfg.backbone_channels.len();
    for (i, &cout) in cfg.backbone_channels.iter().enumerate() {
        let (stride, dilation) = stage_plan(cfg, i);
        let down = stride != 1 || cin != cout;
        t = residual_block(&a, &format!("prompter.stage{}", i + 1), &t, stride, dilation, down);
        if i == 0 {
            low_level = Some(t.clone());
        }
        if i == stages - 2 {
            aux_features = Some(t.clone());
        }
        cin = cout;
    }

    let pyramid = aspp(&a, cfg, &t);
    let low_raw = low_level.expect("stage 1 always runs");
    let low = a.conv_bn_relu("prompter.decoder.low", &low_raw, point_spec());
    let (lh, lw) = (low.shape()[2], low.shape()[3]);
    let up = bilinear_resize(&pyramid, lh, lw);
    let fused = a.conv_bn_relu(
        "prompter.decoder.fuse",
        &ops::concat(1, &[up, low]),
        spec3x3(1, 1),
    );
    let logits = a.conv("prompter.decoder.classifier", &fused, point_spec(), true);
    let main_logits = bilinear_resize(&logits, h, w);
    if main_logits.value().iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalError("main logits contain non-finite values".into()));
    }

    let aux_logits = if training {
        let feats = aux_features.expect("penultimate stage always runs");
        let aux = aux_head_forward(cfg, binder, &feats, training)?;
        if aux.value().iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalError("aux logits contain non-finite values".into()));
        }
        Some(aux)
    } else {
        None
    };

    Ok(PrompterOutput { main_logits, aux_logits })
}
