//! Ranking and classification metrics: AUC-ROC, AUC-PR, F1.
//!
//! Tied scores are handled by block processing in both AUCs, never by an
//! arbitrary ordering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts at a fixed threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// F1 = 2tp / (2tp + fp + fn); 0 when the denominator is 0.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

/// Full evaluation at one threshold, plus the top-k variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub f1: f64,
    pub threshold: f64,
    pub confusion: Confusion,
    /// F1 when predicting exactly as many positives as the label count.
    pub f1_topk: f64,
    pub topk_threshold: f64,
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    Ok(())
}

/// Mann-Whitney AUC: `(#{pos > neg} + 0.5 * #{ties}) / (n_pos * n_neg)`,
/// computed with midranks in O(n log n).
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClassLabels { metric: "auc_roc" });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // midrank assignment over tied blocks
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j averaged
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let n_pos_f = n_pos as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// Average precision: scores sorted descending, tied blocks processed as
/// one unit, `AP = sum_k (R_k - R_{k-1}) * P_k` over block boundaries.
pub fn auc_pr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 {
        return Err(Error::NoPositives { metric: "auc_pr" });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());

    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                tp += 1;
            }
        }
        seen += j - i;
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

/// Predict 1 iff `prob >= threshold`, then F1 with its confusion counts.
pub fn f1_at_threshold(probs: &[f64], labels: &[u8], threshold: f64) -> Result<(f64, Confusion)> {
    check_lengths(probs, labels)?;
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (p, l) in probs.iter().zip(labels) {
        let pred = *p >= threshold;
        match (pred, *l) {
            (true, 1) => c.tp += 1,
            (true, 0) => c.fp += 1,
            (false, 0) => c.tn += 1,
            (false, 1) => c.fn_ += 1,
            _ => {
                return Err(Error::InvalidParameter {
                    name: "labels",
                    message: format!("label {l} is not 0 or 1"),
                })
            }
        }
    }
    Ok((c.f1(), c))
}

/// Threshold equal to the k-th largest score (predicting >= it yields at
/// least k positives; more under ties).
pub fn topk_threshold(scores: &[f64], k: usize) -> f64 {
    if scores.is_empty() || k == 0 {
        return f64::INFINITY;
    }
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sorted[k.min(sorted.len()) - 1]
}

/// Compute the full report: AUCs, F1 at `threshold`, and top-k F1 with
/// k = number of positive labels.
pub fn evaluate(probs: &[f64], labels: &[u8], threshold: f64) -> Result<EvalReport> {
    let auc_roc = auc_roc(probs, labels)?;
    let auc_pr = auc_pr(probs, labels)?;
    let (f1, confusion) = f1_at_threshold(probs, labels, threshold)?;
    let k = labels.iter().filter(|&&l| l == 1).count();
    let topk_thr = topk_threshold(probs, k);
    let (f1_topk, _) = f1_at_threshold(probs, labels, topk_thr)?;
    Ok(EvalReport {
        auc_roc,
        auc_pr,
        f1,
        threshold,
        confusion,
        f1_topk,
        topk_threshold: topk_thr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// O(n^2) pairwise oracle for AUC-ROC.
    fn auc_pairwise(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] != 1 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_roc_perfect_separation() {
        let auc = auc_roc(&[0.9, 0.8, 0.1], &[1, 1, 0]).unwrap();
        assert!((auc - 1.0).abs() < 1e-15);
    }

    #[test]
    fn auc_roc_all_ties_is_half() {
        let auc = auc_roc(&[0.5, 0.5, 0.5, 0.5], &[1, 0, 1, 0]).unwrap();
        assert!((auc - 0.5).abs() < 1e-15);
    }

    #[test]
    fn auc_roc_matches_pairwise_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.random_range(2..=50);
            // coarse grid so ties actually occur
            let scores: Vec<f64> = (0..n)
                .map(|_| rng.random_range(0..10) as f64 / 10.0)
                .collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            labels[0] = 1;
            if n > 1 {
                labels[1] = 0;
            } else {
                continue;
            }
            let fast = auc_roc(&scores, &labels).unwrap();
            let slow = auc_pairwise(&scores, &labels);
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn auc_roc_single_class_errors() {
        assert!(auc_roc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(auc_roc(&[0.1, 0.2], &[0, 0]).is_err());
    }

    #[test]
    fn auc_roc_invariant_under_monotone_transform() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.random_range(4..40);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            labels[0] = 1;
            labels[1] = 0;
            let mapped: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() + s.powi(3)).collect();
            let a = auc_roc(&scores, &labels).unwrap();
            let b = auc_roc(&mapped, &labels).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_roc_label_flip_symmetry() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let n = rng.random_range(4..40);
            let scores: Vec<f64> = (0..n)
                .map(|_| rng.random_range(0..7) as f64 / 7.0)
                .collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            labels[0] = 1;
            labels[1] = 0;
            let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
            let a = auc_roc(&scores, &labels).unwrap();
            let b = auc_roc(&scores, &flipped).unwrap();
            assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_pr_perfect_ranking() {
        let ap = auc_pr(&[0.9, 0.8, 0.1, 0.05], &[1, 1, 0, 0]).unwrap();
        assert!((ap - 1.0).abs() < 1e-15);
    }

    #[test]
    fn auc_pr_hand_case() {
        let ap = auc_pr(&[0.9, 0.8, 0.7], &[1, 0, 1]).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn auc_pr_constant_scores_equal_prevalence() {
        let labels = [1u8, 0, 0, 1, 0, 0, 0, 1, 0, 0];
        let scores = [0.3f64; 10];
        let ap = auc_pr(&scores, &labels).unwrap();
        assert!((ap - 0.3).abs() < 1e-12);
    }

    #[test]
    fn auc_pr_at_least_prevalence_with_positive_promoted() {
        // promoting one positive above an otherwise-constant ranking can
        // only raise AP above the prevalence baseline
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let n = rng.random_range(3..40);
            let mut scores: Vec<f64> = vec![0.5; n];
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            scores[0] = 1.0;
            labels[0] = 1;
            let n_pos = labels.iter().filter(|&&l| l == 1).count() as f64;
            let prevalence = n_pos / labels.len() as f64;
            let ap = auc_pr(&scores, &labels).unwrap();
            assert!(ap + 1e-12 >= prevalence, "ap {ap} < prevalence {prevalence}");
            // closed form: pi + (1 - pi) / P
            let expect = prevalence + (1.0 - prevalence) / n_pos;
            assert!((ap - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_pr_no_positives_errors() {
        assert!(auc_pr(&[0.1, 0.2], &[0, 0]).is_err());
    }

    #[test]
    fn f1_perfect_predictions() {
        let (f1, c) = f1_at_threshold(&[0.9, 0.1, 0.8], &[1, 0, 1], 0.5).unwrap();
        assert_eq!(f1, 1.0);
        assert_eq!(c.total(), 3);
    }

    #[test]
    fn f1_zero_when_no_predicted_positives() {
        let (f1, _) = f1_at_threshold(&[0.1, 0.2], &[1, 1], 0.5).unwrap();
        assert_eq!(f1, 0.0);
    }

    #[test]
    fn f1_balanced_errors() {
        // tp=1, fp=1, fn=1
        let (f1, c) = f1_at_threshold(&[0.9, 0.9, 0.1, 0.1], &[1, 0, 1, 0], 0.5).unwrap();
        assert_eq!(
            c,
            Confusion {
                tp: 1,
                fp: 1,
                tn: 1,
                fn_: 1
            }
        );
        assert!((f1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn raising_threshold_never_increases_tp() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let probs: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<u8> = (0..50).map(|_| rng.random_range(0..2) as u8).collect();
        let mut prev_tp = usize::MAX;
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let (_, c) = f1_at_threshold(&probs, &labels, t).unwrap();
            assert!(c.tp <= prev_tp);
            prev_tp = c.tp;
        }
    }

    #[test]
    fn evaluate_populates_topk() {
        let probs = [0.9, 0.8, 0.3, 0.2];
        let labels = [1u8, 0, 1, 0];
        let report = evaluate(&probs, &labels, 0.5).unwrap();
        // top-2 threshold is 0.8: predicts rows 0 and 1 positive
        assert_eq!(report.topk_threshold, 0.8);
        assert!((report.f1_topk - 0.5).abs() < 1e-15);
        assert_eq!(report.confusion.total(), 4);
    }
}
