//! Per-feature empirical distributions and feature-level rarity scoring.
//!
//! A sample's anomaly degree is decoupled into per-feature rarities: each
//! feature value gets a two-sided tail probability from a smoothed ECDF,
//! and the integer rarity score counts how many features fall below the
//! rarity threshold p2. Pseudo-anomalies' scores span the target range
//! that candidate generation aims for.

use crate::dataset::FeatureMatrix;
use crate::detector::PseudoAnomalySet;
use crate::error::{Error, Result};

/// Per-feature empirical distribution: sorted copies of each column.
///
/// The ECDF uses a mid-rank estimator, `(#below + 0.5 * #equal + 0.5) / (n + 1)`,
/// which keeps every tail probability strictly positive, including at and
/// beyond the observed extremes.
#[derive(Debug, Clone)]
pub struct EcdfModel {
    columns: Vec<Vec<f64>>,
    n: usize,
}

/// Two-sided tail probabilities, one per feature, each in (0, 1].
#[derive(Debug, Clone)]
pub struct TailVector(pub Vec<f64>);

/// Closed integer interval of rarity scores, `0 <= lo <= hi <= m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ScoreRange {
    pub lo: usize,
    pub hi: usize,
}

/// Fit per-feature ECDFs on a nonempty matrix.
pub fn fit_ecdf(matrix: &FeatureMatrix) -> Result<EcdfModel> {
    if matrix.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let m = matrix.n_cols();
    let mut columns = vec![Vec::with_capacity(matrix.n_rows()); m];
    for row in matrix.rows() {
        for j in 0..m {
            columns[j].push(row[j]);
        }
    }
    for col in &mut columns {
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }
    Ok(EcdfModel {
        columns,
        n: matrix.n_rows(),
    })
}

impl EcdfModel {
    pub fn feature_count(&self) -> usize {
        self.columns.len()
    }

    pub fn sample_count(&self) -> usize {
        self.n
    }

    /// Sorted values of feature `j`.
    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    /// Smoothed ECDF of feature `j` at `t`.
    pub fn cdf(&self, j: usize, t: f64) -> f64 {
        let col = &self.columns[j];
        let below = col.partition_point(|v| *v < t);
        let below_or_equal = col.partition_point(|v| *v <= t);
        let equal = below_or_equal - below;
        (below as f64 + 0.5 * equal as f64 + 0.5) / (self.n as f64 + 1.0)
    }

    /// Two-sided tail probability of feature `j` at `t`: `2 * min(F, 1-F)`,
    /// capped at 1.
    pub fn tail(&self, j: usize, t: f64) -> f64 {
        let f = self.cdf(j, t);
        (2.0 * f.min(1.0 - f)).min(1.0)
    }

    /// Tail probabilities for a full sample.
    pub fn tail_probability(&self, sample: &[f64]) -> Result<TailVector> {
        if sample.len() != self.feature_count() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_count(),
                got: sample.len(),
            });
        }
        Ok(TailVector(
            (0..sample.len()).map(|j| self.tail(j, sample[j])).collect(),
        ))
    }

    /// Linear-interpolation quantile of feature `j` at `q` in [0,1].
    pub fn quantile(&self, j: usize, q: f64) -> f64 {
        let col = &self.columns[j];
        if col.len() == 1 {
            return col[0];
        }
        let h = q.clamp(0.0, 1.0) * (col.len() - 1) as f64;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(col.len() - 1);
        let frac = h - lo as f64;
        col[lo] + frac * (col[hi] - col[lo])
    }

    pub fn feature_min(&self, j: usize) -> f64 {
        self.columns[j][0]
    }

    pub fn feature_max(&self, j: usize) -> f64 {
        *self.columns[j].last().unwrap()
    }
}

/// Count of features whose tail probability is strictly below `p2`.
pub fn rarity_score(tails: &TailVector, p2: f64) -> usize {
    tails.0.iter().filter(|&&t| t < p2).count()
}

/// Rarity score of one sample against the model.
pub fn sample_rarity(model: &EcdfModel, sample: &[f64], p2: f64) -> Result<usize> {
    Ok(rarity_score(&model.tail_probability(sample)?, p2))
}

/// Min/max rarity score over the pseudo-anomaly rows.
pub fn pseudo_score_range(
    model: &EcdfModel,
    pseudo: &PseudoAnomalySet,
    p2: f64,
) -> Result<ScoreRange> {
    if pseudo.rows.is_empty() {
        return Err(Error::EmptyPseudoSet);
    }
    let mut lo = usize::MAX;
    let mut hi = 0;
    for row in pseudo.rows.rows() {
        let s = sample_rarity(model, row, p2)?;
        lo = lo.min(s);
        hi = hi.max(s);
    }
    Ok(ScoreRange { lo, hi })
}
