//! Classification metrics for probability scores.

use serde::Serialize;

/// Share of rows where `p >= 0.5` agrees with the label.
pub fn accuracy(probs: &[f64], labels: &[bool]) -> f64 {
    let hit = probs.iter().zip(labels).filter(|(p, y)| (**p >= 0.5) == **y).count();
    hit as f64 / labels.len().max(1) as f64
}

/// (true positive rate, false positive rate) at threshold 0.5.
pub fn rates(probs: &[f64], labels: &[bool]) -> (f64, f64) {
    let (mut tp, mut fp, mut pos, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (p, &y) in probs.iter().zip(labels) {
        let pred = *p >= 0.5;
        if y {
            pos += 1;
            tp += pred as usize;
        } else {
            neg += 1;
            fp += pred as usize;
        }
    }
    (tp as f64 / pos.max(1) as f64, fp as f64 / neg.max(1) as f64)
}

/// Area under the ROC curve via the rank-sum statistic; tied scores get
/// their average rank. Returns 0.5 when one class is absent.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|&&y| y).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return 0.5;
    }
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y).map(|(r, _)| r).sum();
    (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

/// Sample-weighted mean absolute gap between mean prediction and mean
/// reference probability over equal-width bins of the prediction.
pub fn calibration_error(predicted: &[f64], reference: &[f64], bins: usize) -> f64 {
    let mut sum_pred = vec![0.0; bins];
    let mut sum_ref = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for (&p, &r) in predicted.iter().zip(reference) {
        let b = ((p * bins as f64) as usize).min(bins - 1);
        sum_pred[b] += p;
        sum_ref[b] += r;
        count[b] += 1;
    }
    let n = predicted.len().max(1) as f64;
    (0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (sum_pred[b] - sum_ref[b]).abs() / n)
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub true_positive_rate: f64,
    pub false_positive_rate: f64,
    pub auc: f64,
}

impl ClassificationReport {
    pub fn compute(probs: &[f64], labels: &[bool]) -> Self {
        let (tpr, fpr) = rates(probs, labels);
        Self {
            accuracy: accuracy(probs, labels),
            true_positive_rate: tpr,
            false_positive_rate: fpr,
            auc: roc_auc(probs, labels),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fraction of (positive, negative) pairs ordered correctly, ties half.
    fn auc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut good, mut total) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    total += 1.0;
                    if scores[i] > scores[j] {
                        good += 1.0;
                    } else if scores[i] == scores[j] {
                        good += 0.5;
                    }
                }
            }
        }
        good / total
    }

    #[test]
    fn auc_matches_pair_count() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.4, 0.9, 0.2, 0.4];
        let labels = [false, false, true, true, true, false, false, true];
        assert!((roc_auc(&scores, &labels) - auc_pairs(&scores, &labels)).abs() < 1e-12);
        assert_eq!(roc_auc(&[0.1, 0.9], &[false, true]), 1.0);
    }

    #[test]
    fn rates_and_accuracy() {
        let p = [0.9, 0.2, 0.6, 0.4];
        let y = [true, true, false, false];
        assert_eq!(accuracy(&p, &y), 0.5);
        assert_eq!(rates(&p, &y), (0.5, 0.5));
    }

    #[test]
    fn perfect_calibration_is_zero() {
        let p = [0.05, 0.15, 0.95];
        assert_eq!(calibration_error(&p, &p, 10), 0.0);
        assert!((calibration_error(&[0.5, 0.5], &[0.3, 0.5], 10) - 0.1).abs() < 1e-12);
    }
}
