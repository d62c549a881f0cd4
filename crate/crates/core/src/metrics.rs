//! Binary classification metrics with positive class `1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelling::GoldLabels;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a ratio had a zero denominator and was reported as 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

impl MetricsReport {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let n = tp + fp + tn + fn_;
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                (0.0, true)
            } else {
                (num as f64 / den as f64, false)
            }
        };
        let (precision, precision_undefined) = ratio(tp, tp + fp);
        let (recall, recall_undefined) = ratio(tp, tp + fn_);
        let (f1, f1_undefined) = if precision + recall > 0.0 {
            (2.0 * precision * recall / (precision + recall), false)
        } else {
            (0.0, true)
        };
        MetricsReport {
            n,
            tp,
            fp,
            tn,
            fn_,
            accuracy: if n == 0 {
                0.0
            } else {
                (tp + tn) as f64 / n as f64
            },
            precision,
            recall,
            f1,
            precision_undefined,
            recall_undefined,
            f1_undefined,
        }
    }
}

/// Metrics over the labelled rows of `gold`.
pub fn evaluate(pred: &[u8], gold: &GoldLabels) -> Result<MetricsReport> {
    if pred.len() != gold.len() {
        return Err(Error::DimensionMismatch {
            expected: gold.len(),
            found: pred.len(),
        });
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (i, g) in gold.labelled() {
        match (pred[i] == 1, g == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    if tp + fp + tn + fn_ == 0 {
        return Err(Error::invalid("no labelled rows to evaluate"));
    }
    Ok(MetricsReport::from_counts(tp, fp, tn, fn_))
}

/// `|n_pos - n_neg| / (n_pos + n_neg)` over the labelled rows.
pub fn imbalance_index(gold: &GoldLabels) -> Result<f64> {
    let (pos, total) = gold
        .labelled()
        .fold((0usize, 0usize), |(p, t), (_, g)| (p + g as usize, t + 1));
    if total == 0 {
        return Err(Error::invalid("no labelled rows"));
    }
    Ok(imbalance_from_counts(pos, total - pos))
}

pub fn imbalance_from_counts(n_pos: usize, n_neg: usize) -> f64 {
    n_pos.abs_diff(n_neg) as f64 / (n_pos + n_neg) as f64
}
