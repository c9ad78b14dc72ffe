//! Log-loss and rank-sum AUC.

use serde::{Deserialize, Serialize};

use crate::error::{DginError, Result};
use crate::numerics::PROB_CLAMP;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: f64,
    pub logloss: f64,
    pub n: usize,
    pub positives: usize,
}

/// Mean negative log-likelihood with `p` clamped to `[1e-12, 1 − 1e-12]`.
pub fn batch_loss(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(DginError::Precondition(format!(
            "batch_loss needs equal non-empty inputs, got {} predictions and {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, via the Mann-Whitney rank sum with averaged tie ranks.
pub fn compute_auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(DginError::Precondition(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(DginError::NaN);
    }
    let positives = labels.iter().filter(|&&y| y > 0.5).count();
    let negatives = labels.len() - positives;
    if positives == 0 {
        return Err(DginError::UndefinedAuc("no positive labels"));
    }
    if negatives == 0 {
        return Err(DginError::UndefinedAuc("no negative labels"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j share their average.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let tied_pos = order[i..j].iter().filter(|&&k| labels[k] > 0.5).count();
        positive_rank_sum += avg_rank * tied_pos as f64;
        i = j;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn evaluate(scores: &[f64], labels: &[f64]) -> Result<MetricReport> {
    Ok(MetricReport {
        auc: compute_auc(scores, labels)?,
        logloss: batch_loss(scores, labels)?,
        n: scores.len(),
        positives: labels.iter().filter(|&&y| y > 0.5).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_of_half_is_ln_two() {
        let l = batch_loss(&[0.5], &[1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn loss_near_certain_is_near_zero() {
        let l = batch_loss(&[1.0 - 1e-15, 1e-15], &[1.0, 0.0]).unwrap();
        assert!(l < 1e-11);
    }

    #[test]
    fn clamped_loss_is_finite() {
        let l = batch_loss(&[0.0], &[1.0]).unwrap();
        assert!((l - -(1e-12f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(batch_loss(&[], &[]).is_err());
    }

    #[test]
    fn separated_scores_give_one() {
        assert_eq!(compute_auc(&[0.1, 0.2, 0.8, 0.9], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn all_ties_give_half() {
        assert_eq!(compute_auc(&[0.3; 6], &[0.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            compute_auc(&[0.1, 0.2], &[1.0, 1.0]),
            Err(DginError::UndefinedAuc(_))
        ));
    }
}
