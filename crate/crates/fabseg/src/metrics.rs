//! Pixel-level evaluation: confusion counts, IoU / F1 / accuracy, and the
//! two-class mean IoU.

use crate::error::{Error, Result};
use crate::raster::{Domain, Raster};

/// Micro-averaged pixel confusion counts for one class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    /// Pool counts from another image into this accumulator (micro average).
    pub fn accumulate(&mut self, other: &ConfusionCounts) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.true_neg += other.true_neg;
        self.false_neg += other.false_neg;
    }
}

/// Scores derived from one confusion matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub iou: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// True when the class is absent from both prediction and ground truth
    /// (`TP + FP + FN = 0`); IoU and F1 are 1 by convention in that case.
    pub degenerate: bool,
}

/// Count pixel agreement between a predicted and a reference binary mask.
pub fn confusion_counts(pred: &Raster, gt: &Raster) -> Result<ConfusionCounts> {
    for (name, r) in [("prediction", pred), ("ground truth", gt)] {
        if r.domain() != Domain::Binary {
            return Err(Error::InvalidArgument(format!(
                "{name} raster must be binary, got {}",
                r.domain().name()
            )));
        }
        if r.channels() != 1 {
            return Err(Error::ShapeError(format!(
                "{name} raster must be single-channel, got {} channels",
                r.channels()
            )));
        }
    }
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::ShapeError(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let mut counts = ConfusionCounts::default();
    for (&p, &g) in pred.pixels().iter().zip(gt.pixels().iter()) {
        match (p == 1.0, g == 1.0) {
            (true, true) => counts.true_pos += 1,
            (true, false) => counts.false_pos += 1,
            (false, true) => counts.false_neg += 1,
            (false, false) => counts.true_neg += 1,
        }
    }
    Ok(counts)
}

/// IoU, F1 and accuracy from pooled confusion counts.
///
/// `iou = TP / (TP + FP + FN)`, `f1 = 2 TP / (2 TP + FP + FN)`,
/// `accuracy = (TP + TN) / total`. When the class never occurs on either
/// side, IoU and F1 are defined as 1 and the result is flagged degenerate.
pub fn pixel_metrics(counts: &ConfusionCounts) -> Result<ClassMetrics> {
    if counts.total() == 0 {
        return Err(Error::EmptyInput("confusion counts cover zero pixels".into()));
    }
    let tp = counts.true_pos as f64;
    let fp = counts.false_pos as f64;
    let fn_ = counts.false_neg as f64;
    let tn = counts.true_neg as f64;
    let accuracy = (tp + tn) / counts.total() as f64;
    if counts.true_pos + counts.false_pos + counts.false_neg == 0 {
        return Ok(ClassMetrics { iou: 1.0, f1: 1.0, accuracy, degenerate: true });
    }
    let iou = tp / (tp + fp + fn_);
    let f1 = 2.0 * tp / (2.0 * tp + fp + fn_);
    Ok(ClassMetrics { iou, f1, accuracy, degenerate: false })
}

/// Mean of the region-class and boundary-class IoUs.
pub fn mean_iou(iou_region: f64, iou_boundary: f64) -> Result<f64> {
    for (name, v) in [("region", iou_region), ("boundary", iou_boundary)] {
        if !(0.0..=1.0).contains(&v) || v.is_nan() {
            return Err(Error::InvalidRange(format!("{name} IoU {v} is outside [0, 1]")));
        }
    }
    Ok((iou_region + iou_boundary) / 2.0)
}
