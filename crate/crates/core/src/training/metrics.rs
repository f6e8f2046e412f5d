//! Threshold metrics from the confusion matrix and the rank-statistic AUROC.

use std::cmp::Ordering;

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Confusion counts and the metrics derived from them. A ratio whose
/// denominator is zero is `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub auroc: Option<f64>,
    pub acc: Option<f64>,
    pub f1: Option<f64>,
    pub specificity: Option<f64>,
    pub sensitivity: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl MetricsReport {
    /// Threshold metrics for the given counts; `auroc` is left as passed.
    pub fn from_confusion(tp: usize, fp: usize, tn: usize, fn_: usize, auroc: Option<f64>) -> Self {
        Self {
            tp,
            fp,
            tn,
            fn_,
            auroc,
            acc: ratio(tp + tn, tp + fp + tn + fn_),
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
            specificity: ratio(tn, tn + fp),
            sensitivity: ratio(tp, tp + fn_),
            ppv: ratio(tp, tp + fp),
            npv: ratio(tn, tn + fn_),
        }
    }

    pub fn count(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `(name, value)` in the column order of the reports.
    pub fn named(&self) -> [(&'static str, Option<f64>); 7] {
        [
            ("auroc", self.auroc),
            ("acc", self.acc),
            ("f1", self.f1),
            ("specificity", self.specificity),
            ("sensitivity", self.sensitivity),
            ("ppv", self.ppv),
            ("npv", self.npv),
        ]
    }
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Data("metrics need at least one sample".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Data(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Data(format!("label {l} is not 0 or 1")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Data("scores must be finite".into()));
    }
    Ok(())
}

/// P(score₊ > score₋) + ½·P(score₊ = score₋) via midranks; `None` when
/// only one class is present.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // Sum of positive midranks (1-based), ties sharing their average rank.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok(Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n)))
}

/// Scores at or above `threshold` are predicted positive.
pub fn compute_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    check_inputs(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(MetricsReport::from_confusion(tp, fp, tn, fn_, auroc(scores, labels)?))
}
