//! Training objectives.
//!
//! Two composites drive the pipeline: a weighted main + auxiliary
//! cross-entropy for prompter training, and a Dice + Focal sum for decoder
//! fine-tuning. Each objective exists in two forms that share one formula:
//!
//! * an array-facing function (`cross_entropy_loss`, `dice_loss`, ...) that
//!   validates its inputs and returns a [`LossValue`] with a per-term
//!   breakdown, and
//! * a graph builder (`cross_entropy_graph`, `dice_graph`, ...) that wires
//!   the same arithmetic into an autograd graph for training.
//!
//! The array functions are implemented by evaluating the graph builders on
//! constants, so the two forms cannot drift apart. All reductions are means
//! over pixels; probabilities are clamped to `[PROB_CLAMP_EPS, 1 - PROB_CLAMP_EPS]`
//! before any logarithm.

use crate::error::{Error, Result};
use fabseg_autograd::{ops, Tensor};
use ndarray::ArrayD;

/// Probabilities are clamped to `[eps, 1 - eps]` before logarithms.
pub const PROB_CLAMP_EPS: f64 = 1e-7;

/// Additive smoothing applied to the Dice ratio's numerator and denominator.
///
/// Kept far below evaluation tolerances so hand-computable fixtures hold to
/// nine decimal places while empty masks still yield a finite, zero loss.
pub const DEFAULT_DICE_SMOOTHING: f64 = 1e-12;

/// Finite-difference default step, shared with the verification oracles.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Weights for the prompter composite: `w_m * L_main + w_a * L_aux`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrompterLossWeights {
    pub w_m: f64,
    pub w_a: f64,
}

impl Default for PrompterLossWeights {
    fn default() -> Self {
        Self { w_m: 1.0, w_a: 0.4 }
    }
}

impl PrompterLossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w_m", self.w_m), ("w_a", self.w_a)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "prompter loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.w_m == 0.0 && self.w_a == 0.0 {
            return Err(Error::InvalidArgument(
                "prompter loss weights must not both be zero".into(),
            ));
        }
        Ok(())
    }
}

/// Weights and focal parameters for the fine-tuning composite:
/// `w_d * L_dice + w_f * L_focal`, with focal class weight `alpha` and
/// focusing exponent `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneLossWeights {
    pub w_d: f64,
    pub w_f: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FinetuneLossWeights {
    fn default() -> Self {
        Self { w_d: 1.0, w_f: 1.0, alpha: 0.25, gamma: 2.0 }
    }
}

impl FinetuneLossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w_d", self.w_d), ("w_f", self.w_f)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "fine-tune loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.w_d == 0.0 && self.w_f == 0.0 {
            return Err(Error::InvalidArgument(
                "fine-tune loss weights must not both be zero".into(),
            ));
        }
        validate_alpha_gamma(self.alpha, self.gamma)
    }
}

fn validate_alpha_gamma(alpha: f64, gamma: f64) -> Result<()> {
    if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "focal alpha must lie strictly inside (0, 1), got {alpha}"
        )));
    }
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "focal gamma must be finite and >= 0, got {gamma}"
        )));
    }
    Ok(())
}

/// A scalar loss with its (unweighted) per-term breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub per_term: Vec<(String, f64)>,
}

impl LossValue {
    /// Builds a loss value, rejecting non-finite or genuinely negative
    /// totals. Rounding in the Dice ratio can land a hair below zero; dust
    /// within 1e-9 of zero is absorbed, anything larger is a real defect.
    pub fn new(value: f64, per_term: Vec<(String, f64)>) -> Result<Self> {
        if !value.is_finite() || per_term.iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::NumericalError(format!(
                "non-finite loss value {value} (terms {per_term:?})"
            )));
        }
        if value < -1e-9 {
            return Err(Error::NumericalError(format!("negative loss value {value}")));
        }
        Ok(Self { value: value.max(0.0), per_term })
    }

    fn single(name: &str, value: f64) -> Result<Self> {
        Self::new(value, vec![(name.to_string(), value)])
    }

    /// Term value by name, if present.
    pub fn term(&self, name: &str) -> Option<f64> {
        self.per_term.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }
}

fn require_same_shape(what: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::ShapeError(format!("{what}: shape {a:?} does not match {b:?}")));
    }
    Ok(())
}

fn validate_binary(name: &str, a: &ArrayD<f64>) -> Result<()> {
    if a.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument(format!("{name} must contain only 0 and 1 values")));
    }
    Ok(())
}

fn validate_probabilities(name: &str, a: &ArrayD<f64>) -> Result<()> {
    if a.iter().any(|&v| !v.is_finite() || !(0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidRange(format!("{name} must contain probabilities in [0, 1]")));
    }
    Ok(())
}

fn validate_finite(name: &str, a: &ArrayD<f64>) -> Result<()> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalError(format!("{name} contains non-finite values")));
    }
    Ok(())
}

/// Reads the value of a 0-d (scalar) tensor.
fn scalar_of(t: &Tensor) -> f64 {
    debug_assert!(t.value().ndim() == 0);
    *t.value().iter().next().expect("scalar tensor")
}

fn one_minus(x: &Tensor) -> Tensor {
    ops::add_scalar(&ops::neg(x), 1.0)
}

/// `base^k` for strictly positive bases; `None` means "factor of one".
fn pow_factor(base: &Tensor, k: f64) -> Option<Tensor> {
    if k == 0.0 {
        None
    } else if k == 1.0 {
        Some(base.clone())
    } else if k == 2.0 {
        Some(ops::mul(base, base))
    } else {
        Some(ops::exp(&ops::scale(&ops::ln(base), k)))
    }
}

/// Foreground probability from 2-channel logits `(N, 2, H, W)` via softmax
/// over the channel axis; channel 0 is background, channel 1 foreground.
/// For two classes the softmax reduces exactly to
/// `sigmoid(logit_fg - logit_bg)`. Returns shape `(N, H, W)`.
pub fn softmax_fg_prob(logits: &Tensor) -> Result<Tensor> {
    let shape = logits.shape();
    if shape.len() != 4 || shape[1] != 2 {
        return Err(Error::ShapeError(format!(
            "expected logits of shape (N, 2, H, W), got {shape:?}"
        )));
    }
    let bg = ops::narrow(logits, 1, 0, 1);
    let fg = ops::narrow(logits, 1, 1, 1);
    let prob = ops::sigmoid(&ops::sub(&fg, &bg));
    Ok(ops::reshape(&prob, &[shape[0], shape[2], shape[3]]))
}

/// Mean binary cross-entropy `-mean(gt*ln(p) + (1-gt)*ln(1-p))` with the
/// probabilities clamped to `[eps, 1-eps]`. Output is a 0-d tensor.
pub fn cross_entropy_graph(y: &Tensor, y_bar: &Tensor) -> Result<Tensor> {
    require_same_shape("cross-entropy", y.shape(), y_bar.shape())?;
    let yc = ops::clamp(y, PROB_CLAMP_EPS, 1.0 - PROB_CLAMP_EPS);
    let pos = ops::mul(y_bar, &ops::ln(&yc));
    let neg = ops::mul(&one_minus(y_bar), &ops::ln(&one_minus(&yc)));
    Ok(ops::mean_all(&ops::neg(&ops::add(&pos, &neg))))
}

/// Soft Dice loss `1 - (2*sum(gt*p) + s) / (sum(gt) + sum(p) + s)`.
pub fn dice_graph(y: &Tensor, y_bar: &Tensor, smoothing: f64) -> Result<Tensor> {
    require_same_shape("dice", y.shape(), y_bar.shape())?;
    if !smoothing.is_finite() || smoothing < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "dice smoothing must be finite and >= 0, got {smoothing}"
        )));
    }
    let intersection = ops::sum_all(&ops::mul(y, y_bar));
    let denom = ops::add(&ops::sum_all(y), &ops::sum_all(y_bar));
    let ratio = ops::div(
        &ops::add_scalar(&ops::scale(&intersection, 2.0), smoothing),
        &ops::add_scalar(&denom, smoothing),
    );
    Ok(ops::add_scalar(&ops::neg(&ratio), 1.0))
}

/// Focal loss, mean over pixels of the two class branches:
/// positives contribute `-alpha * (1-p)^gamma * ln(p)`, negatives
/// `-(1-alpha) * p^gamma * ln(1-p)`.
pub fn focal_graph(y: &Tensor, y_bar: &Tensor, alpha: f64, gamma: f64) -> Result<Tensor> {
    require_same_shape("focal", y.shape(), y_bar.shape())?;
    validate_alpha_gamma(alpha, gamma)?;
    let yc = ops::clamp(y, PROB_CLAMP_EPS, 1.0 - PROB_CLAMP_EPS);
    let not_yc = one_minus(&yc);
    let pos_log = ops::ln(&yc);
    let neg_log = ops::ln(&not_yc);
    let pos = match pow_factor(&not_yc, gamma) {
        Some(f) => ops::scale(&ops::mul(&f, &pos_log), -alpha),
        None => ops::scale(&pos_log, -alpha),
    };
    let neg = match pow_factor(&yc, gamma) {
        Some(f) => ops::scale(&ops::mul(&f, &neg_log), -(1.0 - alpha)),
        None => ops::scale(&neg_log, -(1.0 - alpha)),
    };
    let per_pixel = ops::add(&ops::mul(y_bar, &pos), &ops::mul(&one_minus(y_bar), &neg));
    Ok(ops::mean_all(&per_pixel))
}

/// Prompter composite over batched 2-channel logits `(N, 2, H, W)` and
/// ground truth `(N, H, W)`: `w_m * CE(main) + w_a * CE(aux)`.
/// Returns the 0-d total tensor plus the evaluated breakdown
/// (`main_ce`, `aux_ce` hold the unweighted terms).
pub fn prompter_loss_graph(
    main_logits: &Tensor,
    aux_logits: &Tensor,
    y_bar: &Tensor,
    w: &PrompterLossWeights,
) -> Result<(Tensor, LossValue)> {
    w.validate()?;
    require_same_shape("prompter loss heads", main_logits.shape(), aux_logits.shape())?;
    let main_ce = cross_entropy_graph(&softmax_fg_prob(main_logits)?, y_bar)?;
    let aux_ce = cross_entropy_graph(&softmax_fg_prob(aux_logits)?, y_bar)?;
    let total = ops::add(&ops::scale(&main_ce, w.w_m), &ops::scale(&aux_ce, w.w_a));
    let breakdown = LossValue::new(
        scalar_of(&total),
        vec![
            ("main_ce".to_string(), scalar_of(&main_ce)),
            ("aux_ce".to_string(), scalar_of(&aux_ce)),
        ],
    )?;
    Ok((total, breakdown))
}

/// Fine-tuning composite `w_d * Dice + w_f * Focal` over probabilities and a
/// binary target of the same shape. Returns the 0-d total tensor plus the
/// evaluated breakdown (`dice`, `focal` hold the unweighted terms).
pub fn finetune_loss_graph(
    y: &Tensor,
    y_bar: &Tensor,
    w: &FinetuneLossWeights,
) -> Result<(Tensor, LossValue)> {
    w.validate()?;
    let dice = dice_graph(y, y_bar, DEFAULT_DICE_SMOOTHING)?;
    let focal = focal_graph(y, y_bar, w.alpha, w.gamma)?;
    let total = ops::add(&ops::scale(&dice, w.w_d), &ops::scale(&focal, w.w_f));
    let breakdown = LossValue::new(
        scalar_of(&total),
        vec![
            ("dice".to_string(), scalar_of(&dice)),
            ("focal".to_string(), scalar_of(&focal)),
        ],
    )?;
    Ok((total, breakdown))
}

/// Mean binary cross-entropy between predicted probabilities and a binary
/// target of the same shape.
pub fn cross_entropy_loss(y: &ArrayD<f64>, y_bar: &ArrayD<f64>) -> Result<LossValue> {
    require_same_shape("cross-entropy", y.shape(), y_bar.shape())?;
    validate_probabilities("predictions", y)?;
    validate_binary("ground truth", y_bar)?;
    let t = cross_entropy_graph(&Tensor::constant(y.clone()), &Tensor::constant(y_bar.clone()))?;
    LossValue::single("cross_entropy", scalar_of(&t))
}

/// Soft Dice loss with the default smoothing.
pub fn dice_loss(y: &ArrayD<f64>, y_bar: &ArrayD<f64>) -> Result<LossValue> {
    dice_loss_with_smoothing(y, y_bar, DEFAULT_DICE_SMOOTHING)
}

/// Soft Dice loss with explicit smoothing; `smoothing = 0` is exact
/// `1 - F1` on binary predictions but requires a non-empty union.
pub fn dice_loss_with_smoothing(
    y: &ArrayD<f64>,
    y_bar: &ArrayD<f64>,
    smoothing: f64,
) -> Result<LossValue> {
    require_same_shape("dice", y.shape(), y_bar.shape())?;
    validate_probabilities("predictions", y)?;
    validate_binary("ground truth", y_bar)?;
    let t = dice_graph(&Tensor::constant(y.clone()), &Tensor::constant(y_bar.clone()), smoothing)?;
    LossValue::single("dice", scalar_of(&t))
}

/// Focal loss with class weight `alpha` in (0, 1) and focusing exponent
/// `gamma >= 0`.
pub fn focal_loss(y: &ArrayD<f64>, y_bar: &ArrayD<f64>, alpha: f64, gamma: f64) -> Result<LossValue> {
    require_same_shape("focal", y.shape(), y_bar.shape())?;
    validate_probabilities("predictions", y)?;
    validate_binary("ground truth", y_bar)?;
    let t = focal_graph(
        &Tensor::constant(y.clone()),
        &Tensor::constant(y_bar.clone()),
        alpha,
        gamma,
    )?;
    LossValue::single("focal", scalar_of(&t))
}

/// Fine-tuning composite `w_d * Dice + w_f * Focal` on arrays.
pub fn finetune_loss(y: &ArrayD<f64>, y_bar: &ArrayD<f64>, w: &FinetuneLossWeights) -> Result<LossValue> {
    require_same_shape("fine-tune loss", y.shape(), y_bar.shape())?;
    validate_probabilities("predictions", y)?;
    validate_binary("ground truth", y_bar)?;
    let (_, breakdown) =
        finetune_loss_graph(&Tensor::constant(y.clone()), &Tensor::constant(y_bar.clone()), w)?;
    Ok(breakdown)
}

/// Prompter composite on arrays: both logit heads are `(2, H, W)`
/// (background, foreground) against an `(H, W)` binary target.
pub fn prompter_loss(
    main_logits: &ArrayD<f64>,
    aux_logits: &ArrayD<f64>,
    y_bar: &ArrayD<f64>,
    w: &PrompterLossWeights,
) -> Result<LossValue> {
    let gt_shape = y_bar.shape();
    if gt_shape.len() != 2 {
        return Err(Error::ShapeError(format!(
            "expected (H, W) ground truth, got {gt_shape:?}"
        )));
    }
    for (name, logits) in [("main logits", main_logits), ("aux logits", aux_logits)] {
        let s = logits.shape();
        if s.len() != 3 || s[0] != 2 || s[1..] != *gt_shape {
            return Err(Error::ShapeError(format!(
                "{name}: expected shape (2, {}, {}), got {s:?}",
                gt_shape[0], gt_shape[1]
            )));
        }
        validate_finite(name, logits)?;
    }
    validate_binary("ground truth", y_bar)?;
    let (h, width) = (gt_shape[0], gt_shape[1]);
    let as_batch = |a: &ArrayD<f64>| {
        Tensor::constant(a.clone().into_shape_with_order(ndarray::IxDyn(&[1, 2, h, width])).expect("reshape"))
    };
    let gt = Tensor::constant(y_bar.clone().into_shape_with_order(ndarray::IxDyn(&[1, h, width])).expect("reshape"));
    let (_, breakdown) = prompter_loss_graph(&as_batch(main_logits), &as_batch(aux_logits), &gt, w)?;
    Ok(breakdown)
}
