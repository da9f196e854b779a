//! Binary-classification and detection metrics.

mod bootstrap;
mod detection;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ai_cascade::LesionClass;
use crate::Finding;

pub use bootstrap::{bootstrap_f1, percentile, BootstrapSummary, HistogramBin, BOOTSTRAP_RNG, DEFAULT_HISTOGRAM_BINS};
pub use detection::{average_precision, iou, iou_coords, mean_ap, DEFAULT_IOU_THRESHOLD};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no pairs to evaluate")]
    NoPairs,
    #[error("average precision needs a single lesion class, got {0} and {1}")]
    MixedClasses(LesionClass, LesionClass),
    #[error("no AP value for lesion class '{0}'")]
    MissingClass(LesionClass),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Confusion counts with `Abnormal` as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, predicted: Finding, actual: Finding) {
        match (predicted, actual) {
            (Finding::Abnormal, Finding::Abnormal) => self.tp += 1,
            (Finding::Abnormal, Finding::Normal) => self.fp += 1,
            (Finding::Normal, Finding::Abnormal) => self.fn_ += 1,
            (Finding::Normal, Finding::Normal) => self.tn += 1,
        }
    }

    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }
}

/// Tallies `(ai_status, report_label)` pairs.
pub fn confusion(pairs: &[(Finding, Finding)]) -> ConfusionCounts {
    let mut counts = ConfusionCounts::default();
    for &(predicted, actual) in pairs {
        counts.add(predicted, actual);
    }
    counts
}

/// `tp / (tp + (fp + fn) / 2)`; 1.0 when there are no positives at all.
pub fn f1(counts: &ConfusionCounts) -> f64 {
    f1_from(counts.tp, counts.fp, counts.fn_)
}

#[inline]
pub(crate) fn f1_from(tp: u64, fp: u64, fn_: u64) -> f64 {
    if tp == 0 && fp == 0 && fn_ == 0 {
        return 1.0;
    }
    tp as f64 / (tp as f64 + (fp + fn_) as f64 / 2.0)
}
