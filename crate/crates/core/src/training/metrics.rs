use serde::{Deserialize, Serialize};

use crate::error::{MilError, Result};

/// Probability at or above which a bag is predicted positive.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Bag-level evaluation summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub auroc: f64,
    pub f1: f64,
    /// Mean binary cross-entropy.
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_predictions(predicted: &[bool], labels: &[u8]) -> Self {
        let mut c = Confusion::default();
        for (&p, &y) in predicted.iter().zip(labels) {
            match (p, y != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn from_probs(probs: &[f64], labels: &[u8]) -> Self {
        let predicted: Vec<bool> = probs.iter().map(|&p| p >= DECISION_THRESHOLD).collect();
        Self::from_predictions(&predicted, labels)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// `2TP / (2TP + FP + FN)`; 0 when there are neither predicted nor
    /// actual positives.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

/// Area under the ROC curve as the Mann-Whitney statistic:
/// `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)`, computed from mid-ranks in `O(n log n)`.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(MilError::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&y| y != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MilError::AurocUndefined);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MilError::InvalidConfig("AUROC scores contain NaN".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; a tie group shares the mean rank
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] != 0 {
                pos_rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// ACC, AUROC and F1 from bag probabilities; `loss` is passed through.
pub fn compute_metrics(probs: &[f64], labels: &[u8], loss: f64) -> Result<Metrics> {
    let c = Confusion::from_probs(probs, labels);
    Ok(Metrics {
        acc: c.accuracy(),
        auroc: auroc(probs, labels)?,
        f1: c.f1(),
        loss,
    })
}

/// Mean and population standard deviation (divides by `k`).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
    (mean, var.sqrt())
}

/// `mean_{std}` with three decimals, e.g. `0.920_{0.020}`.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.3}_{{{std:.3}}}")
}
