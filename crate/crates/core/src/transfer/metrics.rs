//! Scoring functions.

use crate::error::{Error, Result};

/// Area under the ROC curve as the Mann-Whitney statistic
/// `(wins + ties/2) / (n_pos · n_neg)`. Label 1 is the positive class.
///
/// Computed from mid-ranks in O(n log n); the numerator is a sum of
/// half-integers, so the result is exact.
pub fn roc_auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            expected: vec![labels.len()],
            got: vec![scores.len()],
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid("labels", format!("binary labels expected, found {l}")));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("roc_auc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum of the positives, kept integral
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share the mid-rank (i + 1 + j) / 2
        let pos_in_group = order[i..j].iter().filter(|&&o| labels[o] == 1).count() as u64;
        rank_sum2 += pos_in_group * (i + 1 + j) as u64;
        i = j;
    }
    let (p, n) = (n_pos as u64, n_neg as u64);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Fraction of positions where prediction and label agree.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::Shape {
            expected: vec![labels.len()],
            got: vec![predicted.len()],
        });
    }
    if labels.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty set".into()));
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
    }

    #[test]
    fn auc_errors() {
        assert!(matches!(roc_auc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
        assert!(roc_auc(&[0.1, f64::NAN], &[0, 1]).is_err());
        assert!(roc_auc(&[0.1], &[0, 1]).is_err());
        assert!(roc_auc(&[0.1, 0.2], &[0, 2]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 1, 1]).unwrap(), 0.75);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert!(accuracy(&[], &[]).is_err());
    }
}
