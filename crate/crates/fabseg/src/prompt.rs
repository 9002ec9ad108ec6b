//! Prompt generation: turning prompter logits into the dense mask prompt
//! and the thresholded, probability-weighted labeled point prompts.

use crate::error::{Error, Result};
use ndarray::{Array2, ArrayViewD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_N_FG: usize = 4;
pub const DEFAULT_N_BG: usize = 4;
pub const DEFAULT_T_FG: f64 = 0.7;
pub const DEFAULT_T_BG: f64 = 0.3;

/// Dense prompt: per-pixel farmland logits at image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPrompt {
    mp: Array2<f64>,
}

impl MaskPrompt {
    pub fn new(mp: Array2<f64>) -> Result<Self> {
        if mp.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalError("mask prompt contains non-finite logits".into()));
        }
        Ok(Self { mp })
    }

    /// Collapses 2-channel class logits `(2, H, W)` (background, farmland)
    /// to the single mask-prompt channel `farmland - background`, whose
    /// sigmoid equals the two-class softmax farmland probability.
    pub fn from_two_channel_logits(logits: ArrayViewD<'_, f64>) -> Result<Self> {
        let shape = logits.shape();
        if shape.len() != 3 || shape[0] != 2 {
            return Err(Error::ShapeError(format!(
                "expected class logits of shape (2, H, W), got {shape:?}"
            )));
        }
        let (h, w) = (shape[1], shape[2]);
        let mut mp = Array2::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                mp[(y, x)] = logits[[1, y, x]] - logits[[0, y, x]];
            }
        }
        Self::new(mp)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.mp
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mp.dim()
    }
}

/// Per-pixel farmland probability in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    p: Array2<f64>,
}

impl ProbabilityMap {
    pub fn new(p: Array2<f64>) -> Result<Self> {
        if p.iter().any(|&v| !v.is_finite() || !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidRange("probability map values must lie in [0, 1]".into()));
        }
        Ok(Self { p })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.p
    }

    pub fn shape(&self) -> (usize, usize) {
        self.p.dim()
    }
}

/// Elementwise logistic sigmoid of the mask prompt.
pub fn to_probability_map(mp: &MaskPrompt) -> Result<ProbabilityMap> {
    ProbabilityMap::new(mp.values().mapv(|v| 1.0 / (1.0 + (-v).exp())))
}

/// A labeled prompt point's class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PointLabel {
    Background,
    Foreground,
}

/// Labeled point prompts: pixel coordinates (row, col) with their classes,
/// plus a record of how far each candidate pool fell short of the request.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPromptSet {
    pub coords: Vec<(usize, usize)>,
    pub labels: Vec<PointLabel>,
    pub fg_shortfall: usize,
    pub bg_shortfall: usize,
}

impl PointPromptSet {
    /// Validates coordinate bounds against the source grid and rejects
    /// duplicated (coordinate, label) pairs.
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.coords.len() != self.labels.len() {
            return Err(Error::InvalidPrompt(format!(
                "{} coordinates but {} labels",
                self.coords.len(),
                self.labels.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for (&(r, c), &label) in self.coords.iter().zip(&self.labels) {
            if r >= height || c >= width {
                return Err(Error::InvalidPrompt(format!(
                    "point ({r}, {c}) outside {height}x{width} grid"
                )));
            }
            if !seen.insert(((r, c), label)) {
                return Err(Error::InvalidPrompt(format!(
                    "duplicate point ({r}, {c}) with label {label:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Draws up to `n` indices from `pool` without replacement, each draw
/// proportional to the remaining candidates' weights.
fn weighted_sample(pool: &mut Vec<((usize, usize), f64)>, n: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut picked = Vec::with_capacity(n.min(pool.len()));
    for _ in 0..n {
        if pool.is_empty() {
            break;
        }
        let total: f64 = pool.iter().map(|&(_, w)| w).sum();
        let mut u = rng.random::<f64>() * total;
        let mut chosen = pool.len() - 1;
        for (i, &(_, w)) in pool.iter().enumerate() {
            if u < w {
                chosen = i;
                break;
            }
            u -= w;
        }
        picked.push(pool.swap_remove(chosen).0);
    }
    picked
}

/// Checks the eligibility thresholds: both in `[0, 1]`, finite, and with a
/// strict gap `t_bg < t_fg`.
pub fn validate_thresholds(t_fg: f64, t_bg: f64) -> Result<()> {
    if !t_fg.is_finite()
        || !t_bg.is_finite()
        || !(0.0..=1.0).contains(&t_bg)
        || !(0.0..=1.0).contains(&t_fg)
        || t_bg >= t_fg
    {
        return Err(Error::InvalidRange(format!(
            "thresholds must satisfy 0 <= t_bg < t_fg <= 1, got t_bg = {t_bg}, t_fg = {t_fg}"
        )));
    }
    Ok(())
}

/// Thresholds the probability map into candidate pools and samples labeled
/// point prompts: foreground candidates satisfy `P > t_fg` and are drawn
/// with weight `P`; background candidates satisfy `P < t_bg` and are drawn
/// with weight `1 - P`. Sampling is without replacement and deterministic
/// in `seed`. A pool smaller than its request yields every member and
/// records the shortfall; only entirely empty pools are an error.
pub fn generate_point_prompts(
    p: &ProbabilityMap,
    n_fg: usize,
    n_bg: usize,
    seed: u64,
    t_fg: f64,
    t_bg: f64,
) -> Result<PointPromptSet> {
    validate_thresholds(t_fg, t_bg)?;
    let values = p.values();
    let mut fg_pool: Vec<((usize, usize), f64)> = Vec::new();
    let mut bg_pool: Vec<((usize, usize), f64)> = Vec::new();
    for ((r, c), &v) in values.indexed_iter() {
        if v > t_fg {
            fg_pool.push(((r, c), v));
        } else if v < t_bg {
            bg_pool.push(((r, c), 1.0 - v));
        }
    }
    if fg_pool.is_empty() && bg_pool.is_empty() {
        return Err(Error::NoEligiblePixels(format!(
            "no pixels above {t_fg} or below {t_bg}"
        )));
    }
    let fg_available = fg_pool.len();
    let bg_available = bg_pool.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fg = weighted_sample(&mut fg_pool, n_fg, &mut rng);
    let bg = weighted_sample(&mut bg_pool, n_bg, &mut rng);

    let mut coords = Vec::with_capacity(fg.len() + bg.len());
    let mut labels = Vec::with_capacity(fg.len() + bg.len());
    for c in fg {
        coords.push(c);
        labels.push(PointLabel::Foreground);
    }
    for c in bg {
        coords.push(c);
        labels.push(PointLabel::Background);
    }
    let set = PointPromptSet {
        coords,
        labels,
        fg_shortfall: n_fg.saturating_sub(fg_available),
        bg_shortfall: n_bg.saturating_sub(bg_available),
    };
    let (h, w) = p.shape();
    set.validate(h, w)?;
    Ok(set)
}
