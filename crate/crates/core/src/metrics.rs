//! Binary classification metrics with class 1 as the positive class.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn from_predictions(predicted: &[usize], labels: &[usize]) -> Self {
        let mut c = Confusion::default();
        for (p, y) in predicted.iter().zip(labels) {
            match (*p == 1, *y == 1) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

/// Area under the ROC curve via the Mann-Whitney statistic, with tied scores
/// sharing their average rank. `None` when either class is absent.
pub fn auc(scores: &[f64], labels: &[usize]) -> Option<f64> {
    let n_pos = labels.iter().filter(|y| **y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|k| labels[**k] == 1).count() as f64 * avg;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub specificity: f64,
    pub sensitivity: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    pub confusion: Confusion,
}

impl Metrics {
    /// `scores` are positive-class probabilities; predictions threshold at 0.5.
    pub fn from_scores(scores: &[f64], labels: &[usize]) -> Self {
        let predicted: Vec<usize> = scores.iter().map(|s| usize::from(*s > 0.5)).collect();
        let c = Confusion::from_predictions(&predicted, labels);
        Metrics { accuracy: c.accuracy(), specificity: c.specificity(), sensitivity: c.sensitivity(), f1: c.f1(), auc: auc(scores, labels), confusion: c }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_arithmetic() {
        let c = Confusion::from_predictions(&[1, 1, 0, 0, 1, 0], &[1, 0, 0, 1, 1, 0]);
        assert_eq!(c, Confusion { tp: 2, tn: 2, fp: 1, fn_: 1 });
        assert_eq!(c.accuracy(), 4.0 / 6.0);
        assert_eq!(c.sensitivity(), 2.0 / 3.0);
        assert_eq!(c.specificity(), 2.0 / 3.0);
        assert_eq!(c.f1(), 4.0 / 6.0);
    }

    #[test]
    fn auc_known_values() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]), Some(1.0));
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1]), Some(0.0));
        assert_eq!(auc(&[0.5; 4], &[0, 1, 0, 1]), Some(0.5));
        // One discordant pair out of four.
        assert_eq!(auc(&[0.1, 0.6, 0.5, 0.9], &[0, 0, 1, 1]), Some(0.75));
        // Tie between a positive and a negative counts as half.
        assert_eq!(auc(&[0.1, 0.5, 0.5, 0.9], &[0, 0, 1, 1]), Some(0.875));
        assert_eq!(auc(&[0.3, 0.4], &[1, 1]), None);
    }

    /// Pairwise definition of AUC, quadratic but obviously correct.
    fn auc_pairs(scores: &[f64], labels: &[usize]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    den += 1.0;
                    num += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn rank_auc_matches_pairwise_definition() {
        use rand::Rng;
        let mut rng = crate::rng::seeded(1);
        for _ in 0..50 {
            let n = rng.gen_range(2..40);
            let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..6u8)) / 5.0).collect();
            let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            assert!((auc(&scores, &labels).unwrap() - auc_pairs(&scores, &labels)).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_are_consistent() {
        let m = Metrics::from_scores(&[0.9, 0.2, 0.7, 0.4, 0.6], &[1, 0, 0, 1, 1]);
        let c = m.confusion;
        assert!((m.accuracy - (c.tp + c.tn) as f64 / 5.0).abs() < 1e-12);
        assert!(m.auc.unwrap() >= 0.0 && m.auc.unwrap() <= 1.0);
    }
}
