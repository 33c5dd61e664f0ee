//! Evaluation metrics: ROC-AUC, average precision, Pearson correlation with
//! exact p-values, bootstrap confidence intervals, and the instance-level
//! detection/segmentation quality suite.

use alloc::vec::Vec;
use core::fmt;

pub mod bootstrap;
pub mod matching;
mod special;

pub use bootstrap::{bootstrap_ci, BootstrapCi};
pub use matching::{f1_per_class, match_instances, pq_dq_sq, MatchResult, Quality};
pub use special::{betainc_reg, t_two_sided_p};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MetricsError {
    /// Both classes are required (AUC) or at least one positive (AP).
    SingleClass,
    NoPositives,
    /// Mismatched input lengths.
    LengthMismatch { left: usize, right: usize },
    /// Pearson needs n >= 3 and nonzero variance on both sides.
    TooFewSamples { n: usize },
    ZeroVariance,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::SingleClass => write!(f, "labels contain a single class"),
            MetricsError::NoPositives => write!(f, "no positive labels"),
            MetricsError::LengthMismatch { left, right } => {
                write!(f, "input lengths differ: {left} vs {right}")
            }
            MetricsError::TooFewSamples { n } => write!(f, "need at least 3 samples, got {n}"),
            MetricsError::ZeroVariance => write!(f, "zero variance input"),
        }
    }
}

impl core::error::Error for MetricsError {}

fn check_lengths(a: usize, b: usize) -> Result<(), MetricsError> {
    if a != b {
        return Err(MetricsError::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

/// ROC-AUC as the exact rank statistic: `P(score+ > score-) + P(tie)/2`.
///
/// Computed with midranks in O(n log n); ties contribute exactly one half per
/// tied pair, so the result equals brute-force pair counting bit for bit.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Midrank sum over positives; ranks are 1-based. U counts (pos > neg)
    // pairs plus half the ties, expressed in exact halves.
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Step-wise average precision: `sum (R_i - R_{i-1}) * P_i` over descending
/// score thresholds, with tied scores grouped at a single threshold.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 {
        return Err(MetricsError::NoPositives);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    let mut ap = 0.0f64;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut recall_prev = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - recall_prev) * precision;
        recall_prev = recall;
        i = j + 1;
    }
    Ok(ap)
}

/// Points of the precision-recall curve at each distinct score threshold,
/// descending, consistent with [`average_precision`].
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>, MetricsError> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        points.push((tp as f64 / n_pos as f64, tp as f64 / (tp + fp) as f64));
        i = j + 1;
    }
    Ok(points)
}

/// Pearson correlation with a two-sided p-value from the exact t-distribution
/// tail (regularized incomplete beta, accurate to 1e-10).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<(f64, f64), MetricsError> {
    check_lengths(x.len(), y.len())?;
    let n = x.len();
    if n < 3 {
        return Err(MetricsError::TooFewSamples { n });
    }
    let mean_x = x.iter().sum::<f64>() / n as f64;
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        let dx = x[i] - mean_x;
        let dy = y[i] - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    let mut r = sxy / libm::sqrt(sxx * syy);
    r = r.clamp(-1.0, 1.0);

    let df = (n - 2) as f64;
    let p = if 1.0 - r * r <= 0.0 {
        0.0
    } else {
        let t = r * libm::sqrt(df / (1.0 - r * r));
        special::t_two_sided_p(t, df)
    };
    Ok((r, p))
}
