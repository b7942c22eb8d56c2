//! Rank-based area under the ROC curve.

use crate::error::{Error, Result};

/// Probability that a random positive scores above a random negative, ties
/// counting one half. `labels[i]` is true for positives.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::contract("one label per score required"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::domain("NaN score"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::contract("AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    // Sum of positive ranks with ties given their average rank.
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut end = k + 1;
        while end < order.len() && scores[order[end]] == scores[order[k]] {
            end += 1;
        }
        let avg_rank = (k + end + 1) as f64 / 2.0;
        let pos = order[k..end].iter().filter(|&&i| labels[i]).count();
        rank_sum += avg_rank * pos as f64;
        k = end;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}
