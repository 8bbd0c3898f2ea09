//! Deterministic offline candidate generator.
//!
//! Stands in for the chat endpoint: each generated row targets a rarity
//! score drawn from the pseudo-anomaly score range by placing that many
//! features in the distribution tails and the rest in the inter-quartile
//! region, then re-scores itself to guarantee the contract. Tail values
//! imitate the pseudo rows' own rare values where available, the same way
//! an example-following generator would, falling back to draws over the
//! tail region.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::FeatureMatrix;
use crate::detector::PseudoAnomalySet;
use crate::error::{Error, Result};
use crate::generation::{CandidateSet, Provenance};
use crate::rarity::{sample_rarity, EcdfModel, ScoreRange};

const RESAMPLE_BUDGET: usize = 20;

/// Generate `count` rows whose rarity scores land inside `range` when
/// re-scored against `model` with threshold `p2`. Deterministic given the
/// seed; rows failing the re-score are resampled up to 20 times before
/// erroring.
pub fn mock_generate(
    seed: u64,
    model: &EcdfModel,
    range: ScoreRange,
    pseudo: &PseudoAnomalySet,
    p2: f64,
    count: usize,
) -> Result<CandidateSet> {
    let m = model.feature_count();
    if count == 0 {
        return Err(Error::InvalidParameter {
            name: "count",
            message: "must be at least 1".into(),
        });
    }
    if range.lo > range.hi || range.hi > m {
        return Err(Error::InvalidParameter {
            name: "range",
            message: format!("invalid score range [{}, {}] for m={m}", range.lo, range.hi),
        });
    }
    if !(0.0 < p2 && p2 <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "p2",
            message: format!("must be in (0, 1], got {p2}"),
        });
    }
    if pseudo.rows.n_cols() != m && !pseudo.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: pseudo.rows.n_cols(),
        });
    }

    // per-feature pool of rare pseudo values to imitate
    let mut tail_exemplars: Vec<Vec<f64>> = vec![Vec::new(); m];
    for row in pseudo.rows.rows() {
        if pseudo.rows.is_empty() {
            break;
        }
        for (j, &v) in row.iter().enumerate() {
            if model.tail(j, v) < p2 {
                tail_exemplars[j].push(v);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = FeatureMatrix::empty(m);
    let mut row = vec![0.0; m];
    let mut feature_order: Vec<usize> = (0..m).collect();

    for row_idx in 0..count {
        let mut accepted = false;
        for _ in 0..RESAMPLE_BUDGET {
            let target = rng.random_range(range.lo..=range.hi);
            // partial Fisher-Yates: the first `target` entries are the rare features
            for i in 0..target.min(m.saturating_sub(1)) {
                let j = rng.random_range(i..m);
                feature_order.swap(i, j);
            }
            for (pos, &j) in feature_order.iter().enumerate() {
                row[j] = if pos == 0 && target > 0 {
                    // the leading rare feature carries an evident deviation
                    draw_tail_strong(&mut rng, model, &tail_exemplars[j], j, p2)
                } else if pos < target {
                    draw_tail(&mut rng, model, &tail_exemplars[j], j, p2)
                } else {
                    draw_nonrare(&mut rng, model, j, p2)
                };
            }
            if (range.lo..=range.hi).contains(&sample_rarity(model, &row, p2)?) {
                rows.push_row(&row)?;
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::MockResampleBudget {
                budget: RESAMPLE_BUDGET,
                row: row_idx,
            });
        }
    }

    Ok(CandidateSet {
        rows,
        provenance: Provenance::Mock,
    })
}

fn span_extension(model: &EcdfModel, j: usize) -> f64 {
    let span = model.feature_max(j) - model.feature_min(j);
    if span > 0.0 {
        0.05 * span
    } else {
        0.05 * model.feature_min(j).abs().max(1.0)
    }
}

/// One value from the tail region of feature `j`: below the p2/2 quantile
/// or above the 1 - p2/2 quantile, extended 5% of the span beyond the
/// observed extreme.
///
/// Preference order mirrors how an example-following generator behaves:
/// jitter a rare pseudo value when one exists, otherwise draw a tail
/// quantile, occasionally landing in the extension band.
fn draw_tail(
    rng: &mut ChaCha8Rng,
    model: &EcdfModel,
    exemplars: &[f64],
    j: usize,
    p2: f64,
) -> f64 {
    let ext = span_extension(model, j);
    if !exemplars.is_empty() {
        let base = exemplars[rng.random_range(0..exemplars.len())];
        let jitter = rng.random_range(-0.4..0.4) * ext;
        let v = base + jitter;
        if model.tail(j, v) < p2 {
            return v;
        }
        return base;
    }
    let lo = model.feature_min(j);
    let hi = model.feature_max(j);
    let low_side = rng.random_range(0..2) == 0;
    let extend = rng.random_range(0..10) == 0;
    match (low_side, extend) {
        (true, true) => rng.random_range((lo - ext)..lo),
        (true, false) => {
            let t = rng.random_range(0.0..(p2 / 2.0));
            model.quantile(j, t)
        }
        (false, true) => rng.random_range(hi..(hi + ext)),
        (false, false) => {
            let t = rng.random_range((1.0 - p2 / 2.0)..1.0);
            model.quantile(j, t)
        }
    }
}

/// Like [`draw_tail`] but favoring evident deviations: takes the most
/// extreme of three exemplar draws and jitters it away from the
/// distribution center, so every candidate carries at least one clearly
/// anomalous coordinate the way the pseudo rows do.
fn draw_tail_strong(
    rng: &mut ChaCha8Rng,
    model: &EcdfModel,
    exemplars: &[f64],
    j: usize,
    p2: f64,
) -> f64 {
    if exemplars.is_empty() {
        return draw_tail(rng, model, exemplars, j, p2);
    }
    let ext = span_extension(model, j);
    let mut base = exemplars[rng.random_range(0..exemplars.len())];
    for _ in 0..2 {
        let other = exemplars[rng.random_range(0..exemplars.len())];
        if model.tail(j, other) < model.tail(j, base) {
            base = other;
        }
    }
    // outward jitter: moving away from the center never reduces rarity
    let center = model.quantile(j, 0.5);
    let jitter = rng.random_range(0.0..0.5) * ext;
    if base >= center {
        base + jitter
    } else {
        base - jitter
    }
}

/// Quantile draw from the 0.25..0.75 band so unselected features do not
/// add rarity.
fn draw_nonrare(rng: &mut ChaCha8Rng, model: &EcdfModel, j: usize, _p2: f64) -> f64 {
    let q = rng.random_range(0.25..0.75);
    model.quantile(j, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rarity::fit_ecdf;

    fn fit_model(n: usize, m: usize) -> EcdfModel {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..m).map(|j| (i * 7 % n) as f64 + j as f64 * 0.1).collect())
            .collect();
        fit_ecdf(&FeatureMatrix::from_rows(&rows, m).unwrap()).unwrap()
    }

    fn empty_pseudo(m: usize) -> PseudoAnomalySet {
        PseudoAnomalySet::new(vec![], FeatureMatrix::empty(m)).unwrap()
    }

    fn tail_pseudo(model: &EcdfModel) -> PseudoAnomalySet {
        let m = model.feature_count();
        let row: Vec<f64> = (0..m).map(|j| model.feature_max(j) + 0.5).collect();
        PseudoAnomalySet::new(vec![0], FeatureMatrix::from_rows(&[row], m).unwrap()).unwrap()
    }

    #[test]
    fn deterministic_given_seed() {
        let model = fit_model(60, 4);
        let range = ScoreRange { lo: 1, hi: 3 };
        let pseudo = tail_pseudo(&model);
        let a = mock_generate(11, &model, range, &pseudo, 0.1, 10).unwrap();
        let b = mock_generate(11, &model, range, &pseudo, 0.1, 10).unwrap();
        assert_eq!(a.rows.values(), b.rows.values());
        let c = mock_generate(12, &model, range, &pseudo, 0.1, 10).unwrap();
        assert_ne!(a.rows.values(), c.rows.values());
    }

    #[test]
    fn emits_exact_count() {
        let model = fit_model(60, 4);
        let set =
            mock_generate(5, &model, ScoreRange { lo: 1, hi: 2 }, &empty_pseudo(4), 0.1, 7)
                .unwrap();
        assert_eq!(set.rows.n_rows(), 7);
        assert_eq!(set.provenance, Provenance::Mock);
    }

    #[test]
    fn every_row_rescopes_into_range() {
        let model = fit_model(100, 5);
        let range = ScoreRange { lo: 2, hi: 4 };
        for pseudo in [empty_pseudo(5), tail_pseudo(&model)] {
            let set = mock_generate(3, &model, range, &pseudo, 0.1, 50).unwrap();
            for row in set.rows.rows() {
                let s = sample_rarity(&model, row, 0.1).unwrap();
                assert!((range.lo..=range.hi).contains(&s), "score {s} outside range");
            }
        }
    }

    #[test]
    fn zero_score_rows_draw_from_interquartile() {
        let model = fit_model(100, 5);
        let set =
            mock_generate(3, &model, ScoreRange { lo: 0, hi: 0 }, &empty_pseudo(5), 0.1, 5)
                .unwrap();
        for row in set.rows.rows() {
            assert_eq!(sample_rarity(&model, row, 0.1).unwrap(), 0);
        }
    }

    #[test]
    fn rejects_invalid_range() {
        let model = fit_model(20, 2);
        let pseudo = empty_pseudo(2);
        assert!(mock_generate(1, &model, ScoreRange { lo: 2, hi: 1 }, &pseudo, 0.1, 3).is_err());
        assert!(mock_generate(1, &model, ScoreRange { lo: 0, hi: 9 }, &pseudo, 0.1, 3).is_err());
    }

    #[test]
    fn pathological_range_exhausts_budget() {
        // n = 2 samples: tails cannot reach tau < p2 = 0.05 because the
        // minimum attainable tau is 1/(n+1) = 1/3
        let rows = vec![vec![0.0], vec![1.0]];
        let model = fit_ecdf(&FeatureMatrix::from_rows(&rows, 1).unwrap()).unwrap();
        let err = mock_generate(1, &model, ScoreRange { lo: 1, hi: 1 }, &empty_pseudo(1), 0.05, 1)
            .unwrap_err();
        assert!(matches!(err, Error::MockResampleBudget { .. }));
    }
}
