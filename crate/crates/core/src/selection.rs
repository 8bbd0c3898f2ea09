//! Two-stage candidate filtering.
//!
//! Stage 1 is structural: arity, finiteness, feature-range, and duplicate
//! checks. Stage 2 builds a unified information system over candidates,
//! pseudo-anomalies, and training normals, derives a Gaussian-kernel fuzzy
//! relation, bounds each information granule with cosine t-norm/t-conorm
//! approximations, and selects candidates by weighted uncertainty with a
//! 3-sigma-then-relax threshold schedule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{apply_minmax, fit_minmax, FeatureMatrix, ScalerParams};
use crate::detector::PseudoAnomalySet;
use crate::error::{Error, Result};
use crate::generation::CandidateSet;

/// Which t-conorm backs the lower approximation.
///
/// `Dual` is the De Morgan dual of the cosine t-norm (plus sign before the
/// square-root product) and satisfies the t-conorm boundary S(1, b) = 1.
/// `Literal` keeps the subtractive form as printed in the original
/// fuzzy-rough formulation; it violates that boundary and is retained only
/// for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScosForm {
    #[default]
    Dual,
    Literal,
}

fn check_unit(op: &'static str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::UnitIntervalViolation { op, value: v });
    }
    Ok(())
}

#[inline]
fn t_cos_raw(a: f64, b: f64) -> f64 {
    let t = a * b - ((1.0 - a * a).max(0.0)).sqrt() * ((1.0 - b * b).max(0.0)).sqrt();
    t.max(0.0)
}

#[inline]
fn s_cos_raw(a: f64, b: f64) -> f64 {
    let s = a + b - a * b
        + ((2.0 * a - a * a).max(0.0)).sqrt() * ((2.0 * b - b * b).max(0.0)).sqrt();
    s.min(1.0)
}

#[inline]
fn s_cos_literal_raw(a: f64, b: f64) -> f64 {
    let s = a + b - a * b
        - ((2.0 * a - a * a).max(0.0)).sqrt() * ((2.0 * b - b * b).max(0.0)).sqrt();
    s.min(1.0)
}

/// Cosine t-norm: `max(ab - sqrt(1-a^2) sqrt(1-b^2), 0)`.
pub fn t_cos(a: f64, b: f64) -> Result<f64> {
    check_unit("t_cos", a)?;
    check_unit("t_cos", b)?;
    Ok(t_cos_raw(a, b))
}

/// Cosine t-conorm, De Morgan dual of [`t_cos`]:
/// `min(a + b - ab + sqrt(2a-a^2) sqrt(2b-b^2), 1)`.
pub fn s_cos(a: f64, b: f64) -> Result<f64> {
    check_unit("s_cos", a)?;
    check_unit("s_cos", b)?;
    Ok(s_cos_raw(a, b))
}

/// Subtractive variant of [`s_cos`] (see [`ScosForm::Literal`]).
pub fn s_cos_literal(a: f64, b: f64) -> Result<f64> {
    check_unit("s_cos_literal", a)?;
    check_unit("s_cos_literal", b)?;
    Ok(s_cos_literal_raw(a, b))
}

/// Stage-1 rejection tally by reason.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionCounts {
    pub wrong_arity: usize,
    pub non_finite: usize,
    pub out_of_range: usize,
    pub duplicate: usize,
}

impl RejectionCounts {
    pub fn total(&self) -> usize {
        self.wrong_arity + self.non_finite + self.out_of_range + self.duplicate
    }
}

/// Stage-1 output: surviving candidates plus per-reason rejection counts.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub accepted: CandidateSet,
    pub rejected: RejectionCounts,
}

/// Validate candidates against the schema and the observed feature ranges
/// of train + pseudo rows (with a 10% span margin), then drop exact
/// duplicates, keeping first occurrences.
///
/// All candidates carry the anomaly label by construction, so the label
/// check always passes.
pub fn stage1_filter(
    candidates: &CandidateSet,
    feature_count: usize,
    universe_ranges: &ScalerParams,
) -> ValidationReport {
    let mut rejected = RejectionCounts::default();
    let mut accepted = FeatureMatrix::empty(feature_count);
    let mut seen = std::collections::HashSet::new();

    if candidates.rows.n_cols() != feature_count {
        // wrong arity is normally dropped at parse time; a whole-set
        // mismatch means every row fails the re-check
        rejected.wrong_arity = candidates.rows.n_rows();
        return ValidationReport {
            accepted: CandidateSet {
                rows: accepted,
                provenance: candidates.provenance,
            },
            rejected,
        };
    }

    for row in candidates.rows.rows() {
        if candidates.rows.is_empty() {
            break;
        }
        if row.iter().any(|v| !v.is_finite()) {
            rejected.non_finite += 1;
            continue;
        }
        let out_of_range = row.iter().enumerate().any(|(j, v)| {
            let span = universe_ranges.maxs[j] - universe_ranges.mins[j];
            let lo = universe_ranges.mins[j] - 0.1 * span;
            let hi = universe_ranges.maxs[j] + 0.1 * span;
            *v < lo || *v > hi
        });
        if out_of_range {
            rejected.out_of_range += 1;
            continue;
        }
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        if !seen.insert(key) {
            rejected.duplicate += 1;
            continue;
        }
        accepted.push_row(row).expect("arity checked above");
    }

    ValidationReport {
        accepted: CandidateSet {
            rows: accepted,
            provenance: candidates.provenance,
        },
        rejected,
    }
}

/// Per-feature (min, max) over a set of matrices, for stage-1 range checks.
pub fn feature_ranges(parts: &[&FeatureMatrix]) -> Result<ScalerParams> {
    let stacked = FeatureMatrix::vstack(parts)?;
    fit_minmax(&stacked)
}

/// Row provenance inside the unified information system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Train,
    Pseudo,
    Candidate,
}

/// The unified universe U: candidates, pseudo-anomalies, and training
/// normals stacked in that order, min-max scaled on the union.
#[derive(Debug, Clone)]
pub struct InformationSystem {
    /// Union-scaled rows in [0,1].
    pub scaled: FeatureMatrix,
    /// Original-space rows, same order as `scaled`.
    pub raw: FeatureMatrix,
    pub origin: Vec<Origin>,
}

impl InformationSystem {
    pub fn len(&self) -> usize {
        self.origin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin.is_empty()
    }

    pub fn indices_of(&self, origin: Origin) -> Vec<usize> {
        self.origin
            .iter()
            .enumerate()
            .filter(|(_, o)| **o == origin)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Concatenate `[candidate | pseudo | train]`, fit min-max on the union,
/// and scale every row.
pub fn build_universe(
    accepted: &CandidateSet,
    pseudo: &PseudoAnomalySet,
    train: &FeatureMatrix,
) -> Result<InformationSystem> {
    let raw = FeatureMatrix::vstack(&[&accepted.rows, &pseudo.rows, train])?;
    if raw.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let params = fit_minmax(&raw)?;
    let scaled = apply_minmax(&params, &raw)?;
    let mut origin = Vec::with_capacity(raw.n_rows());
    origin.extend(std::iter::repeat_n(
        Origin::Candidate,
        accepted.rows.n_rows(),
    ));
    origin.extend(std::iter::repeat_n(Origin::Pseudo, pseudo.rows.n_rows()));
    origin.extend(std::iter::repeat_n(Origin::Train, train.n_rows()));
    Ok(InformationSystem {
        scaled,
        raw,
        origin,
    })
}

/// Dense symmetric fuzzy relation `r_ij = exp(-||z_i - z_j||^2 / delta)`
/// with unit diagonal.
#[derive(Debug, Clone)]
pub struct RelationMatrix {
    n: usize,
    r: Vec<f64>,
    /// `sqrt(1 - r^2)` cached for the approximation kernels.
    sqrt_comp: Vec<f64>,
    pub delta: f64,
}

impl RelationMatrix {
    /// Build from explicit entries; diagonal must be 1 and the matrix
    /// symmetric (checked).
    pub fn from_entries(n: usize, r: Vec<f64>, delta: f64) -> Result<Self> {
        if r.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: r.len(),
            });
        }
        for i in 0..n {
            if r[i * n + i] != 1.0 {
                return Err(Error::InvalidParameter {
                    name: "relation",
                    message: format!("diagonal entry {i} is not 1"),
                });
            }
            for j in 0..n {
                let v = r[i * n + j];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidParameter {
                        name: "relation",
                        message: format!("entry ({i},{j}) = {v} outside [0,1]"),
                    });
                }
                if r[i * n + j] != r[j * n + i] {
                    return Err(Error::InvalidParameter {
                        name: "relation",
                        message: format!("asymmetry at ({i},{j})"),
                    });
                }
            }
        }
        let sqrt_comp = r
            .iter()
            .map(|v| ((1.0 - v * v).max(0.0)).sqrt())
            .collect();
        Ok(Self {
            n,
            r,
            sqrt_comp,
            delta,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.r[i * self.n..(i + 1) * self.n]
    }

    fn sqrt_comp_row(&self, i: usize) -> &[f64] {
        &self.sqrt_comp[i * self.n..(i + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.r[i * self.n + j]
    }
}

/// Gaussian-kernel relation over the scaled universe.
pub fn fuzzy_relation(system: &InformationSystem, delta: f64) -> Result<RelationMatrix> {
    if delta <= 0.0 || !delta.is_finite() {
        return Err(Error::InvalidParameter {
            name: "delta",
            message: format!("must be a positive real, got {delta}"),
        });
    }
    let n = system.len();
    let mut r = vec![0.0; n * n];
    for i in 0..n {
        r[i * n + i] = 1.0;
        let zi = system.scaled.row(i);
        for j in (i + 1)..n {
            let zj = system.scaled.row(j);
            let d2: f64 = zi
                .iter()
                .zip(zj)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            let v = (-d2 / delta).exp();
            r[i * n + j] = v;
            r[j * n + i] = v;
        }
    }
    let sqrt_comp = r
        .iter()
        .map(|v| ((1.0 - v * v).max(0.0)).sqrt())
        .collect();
    Ok(RelationMatrix {
        n,
        r,
        sqrt_comp,
        delta,
    })
}

/// Median of pairwise squared distances over the scaled universe; the
/// default kernel width. Falls back to 1.0 when the median vanishes
/// (identical rows).
pub fn median_pairwise_sq_dist(system: &InformationSystem) -> f64 {
    let n = system.len();
    if n < 2 {
        return 1.0;
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let zi = system.scaled.row(i);
        for j in (i + 1)..n {
            let zj = system.scaled.row(j);
            dists.push(
                zi.iter()
                    .zip(zj)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>(),
            );
        }
    }
    let mid = dists.len() / 2;
    let (_, med, _) = dists.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
    let med = *med;
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Pointwise lower/upper approximations of one granule over the universe.
#[derive(Debug, Clone)]
pub struct ApproximationPair {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Kernelized approximations of the granule `[x_i]`:
/// `upper(x) = sup_y T_cos(r(x,y), r(i,y))` and
/// `lower(x) = inf_y S_cos(1 - r(x,y), r(i,y))`.
pub fn granule_approximations(relation: &RelationMatrix, i: usize) -> Result<ApproximationPair> {
    granule_approximations_with(relation, i, ScosForm::Dual)
}

pub fn granule_approximations_with(
    relation: &RelationMatrix,
    i: usize,
    form: ScosForm,
) -> Result<ApproximationPair> {
    let n = relation.n;
    if i >= n {
        return Err(Error::UniverseIndexOutOfRange { index: i, n });
    }
    let granule = relation.row(i);
    // per-granule tables shared by every x
    let mut sqrt_comp_g = vec![0.0; n]; // sqrt(1 - b^2)
    let mut sqrt_conorm_g = vec![0.0; n]; // sqrt(2b - b^2)
    let mut one_minus_g = vec![0.0; n];
    for y in 0..n {
        let b = granule[y];
        sqrt_comp_g[y] = ((1.0 - b * b).max(0.0)).sqrt();
        sqrt_conorm_g[y] = ((2.0 * b - b * b).max(0.0)).sqrt();
        one_minus_g[y] = 1.0 - b;
    }

    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for x in 0..n {
        let rx = relation.row(x);
        let sx = relation.sqrt_comp_row(x);
        let mut up = 0.0f64;
        let mut lo = f64::INFINITY;
        match form {
            ScosForm::Dual => {
                // t_cos terms are clamped at 0, so starting the max at 0
                // matches clamping each term; the s_cos min(.,1) clamp
                // commutes with the running min.
                for y in 0..n {
                    let t = rx[y] * granule[y] - sx[y] * sqrt_comp_g[y];
                    up = up.max(t);
                    // s_cos(1-r, b) = (1-r)(1-b) + b + sqrt(1-r^2) sqrt(2b-b^2)
                    let s = (1.0 - rx[y]) * one_minus_g[y] + granule[y] + sx[y] * sqrt_conorm_g[y];
                    lo = lo.min(s);
                }
            }
            ScosForm::Literal => {
                for y in 0..n {
                    let t = rx[y] * granule[y] - sx[y] * sqrt_comp_g[y];
                    up = up.max(t);
                    let s = (1.0 - rx[y]) * one_minus_g[y] + granule[y] - sx[y] * sqrt_conorm_g[y];
                    lo = lo.min(s);
                }
            }
        }
        upper[x] = up;
        lower[x] = lo.min(1.0);
    }
    Ok(ApproximationPair { lower, upper })
}

/// Per-row approximation accuracy, granule weight, and weighted
/// uncertainty over the universe.
#[derive(Debug, Clone)]
pub struct UncertaintyVector {
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
    pub alpha_prime: Vec<f64>,
}

/// Accuracy `alpha = |lower| / |upper|` from sigma-counts.
pub fn approximation_accuracy(lower_count: f64, upper_count: f64) -> f64 {
    lower_count / upper_count
}

/// Weighted uncertainty `alpha' = 1 - lambda * alpha`.
pub fn weighted_alpha_prime(lambda: f64, alpha: f64) -> f64 {
    1.0 - lambda * alpha
}

/// Compute alpha, lambda, and alpha' for every row of the universe.
///
/// Sigma-counts are in-order sums of memberships. Granules are processed
/// in parallel; each row's arithmetic is order-fixed, so the result is
/// bitwise independent of scheduling.
pub fn weighted_uncertainty(relation: &RelationMatrix) -> UncertaintyVector {
    weighted_uncertainty_with(relation, ScosForm::Dual)
}

pub fn weighted_uncertainty_with(relation: &RelationMatrix, form: ScosForm) -> UncertaintyVector {
    let n = relation.n;
    let per_row: Vec<(f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let approx = granule_approximations_with(relation, i, form)
                .expect("index in range by construction");
            let sum_lower: f64 = approx.lower.iter().sum();
            let sum_upper: f64 = approx.upper.iter().sum();
            let granule_count: f64 = relation.row(i).iter().sum();
            let alpha = approximation_accuracy(sum_lower, sum_upper);
            let lambda = granule_count / n as f64;
            (alpha, lambda, weighted_alpha_prime(lambda, alpha))
        })
        .collect();
    UncertaintyVector {
        alpha: per_row.iter().map(|t| t.0).collect(),
        lambda: per_row.iter().map(|t| t.1).collect(),
        alpha_prime: per_row.iter().map(|t| t.2).collect(),
    }
}

/// Stage-2 survivors: candidate rows (original space) chosen by the
/// relaxation loop, with their universe indices and the final threshold.
#[derive(Debug, Clone)]
pub struct SelectedAnomalies {
    pub rows: FeatureMatrix,
    pub universe_indices: Vec<usize>,
    pub final_threshold: f64,
}

/// Select candidates whose alpha' clears a threshold that starts at
/// `mean + 3 sigma` over all of U and relaxes by `relax_step * sigma`
/// until `target_count` candidates qualify or the threshold reaches the
/// pseudo-anomaly minimum. The final set is capped at `target_count` by
/// descending alpha' (ties: lower universe index first).
pub fn stage2_select(
    uncertainty: &UncertaintyVector,
    system: &InformationSystem,
    target_count: usize,
    relax_step: f64,
) -> Result<SelectedAnomalies> {
    let candidate_idx = system.indices_of(Origin::Candidate);
    if candidate_idx.is_empty() {
        return Err(Error::NoCandidates);
    }
    if target_count == 0 {
        return Err(Error::InvalidParameter {
            name: "target_count",
            message: "must be at least 1".into(),
        });
    }

    let ap = &uncertainty.alpha_prime;
    let n = system.len() as f64;
    let mean: f64 = ap.iter().sum::<f64>() / n;
    let var: f64 = ap.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sigma = var.sqrt();

    let pseudo_idx = system.indices_of(Origin::Pseudo);
    let t_min = pseudo_idx
        .iter()
        .map(|&i| ap[i])
        .fold(f64::INFINITY, f64::min);
    // without pseudo rows the floor falls back to the lowest candidate
    let t_min = if t_min.is_finite() {
        t_min
    } else {
        candidate_idx
            .iter()
            .map(|&i| ap[i])
            .fold(f64::INFINITY, f64::min)
    };

    let count_at = |p3: f64| candidate_idx.iter().filter(|&&i| ap[i] >= p3).count();

    let mut p3 = mean + 3.0 * sigma;
    let step = relax_step * sigma;
    while count_at(p3) < target_count && p3 > t_min {
        if step <= 0.0 {
            break;
        }
        p3 -= step;
    }

    let mut selected: Vec<usize> = candidate_idx
        .iter()
        .copied()
        .filter(|&i| ap[i] >= p3)
        .collect();
    selected.sort_by(|&a, &b| ap[b].partial_cmp(&ap[a]).unwrap().then(a.cmp(&b)));
    selected.truncate(target_count);
    selected.sort_unstable();

    Ok(SelectedAnomalies {
        rows: system.raw.select_rows(&selected),
        universe_indices: selected,
        final_threshold: p3,
    })
}

/// Persisted stage-2 audit record (one entry per stage-1 survivor).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionReport {
    pub final_p3: f64,
    pub delta: f64,
    pub rejected: RejectionCounts,
    pub candidates: Vec<CandidateScore>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateScore {
    pub universe_index: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub alpha_prime: f64,
    pub selected: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::Provenance;
    use rand::{Rng, SeedableRng};

    fn unit_grid() -> Vec<f64> {
        (0..=100).map(|i| i as f64 / 100.0).collect()
    }

    #[test]
    fn t_cos_examples() {
        assert!((t_cos(1.0, 0.7).unwrap() - 0.7).abs() < 1e-15);
        // 3-4-5 complementarity: 0.48 - 0.8 * 0.6 = 0
        assert!(t_cos(0.6, 0.8).unwrap().abs() < 1e-12);
        assert!((t_cos(0.9, 0.9).unwrap() - 0.62).abs() < 1e-12);
    }

    #[test]
    fn s_cos_examples() {
        assert!((s_cos(0.0, 0.7).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(s_cos(1.0, 0.3).unwrap(), 1.0);
        assert_eq!(s_cos(1.0, 0.0).unwrap(), 1.0);
        // 0.28 + 0.6 * sqrt(0.19)
        assert!((s_cos(0.2, 0.1).unwrap() - 0.5415339366124404).abs() < 1e-12);
    }

    #[test]
    fn operator_domain_violations() {
        assert!(t_cos(-0.1, 0.5).is_err());
        assert!(t_cos(0.5, 1.1).is_err());
        assert!(s_cos(2.0, 0.0).is_err());
    }

    #[test]
    fn de_morgan_duality_on_grid() {
        for &a in &unit_grid() {
            for &b in &unit_grid() {
                let s = s_cos(a, b).unwrap();
                let dual = 1.0 - t_cos(1.0 - a, 1.0 - b).unwrap();
                assert!((s - dual).abs() < 1e-12, "a={a} b={b}");
            }
        }
    }

    #[test]
    fn t_norm_laws_on_grid() {
        let grid = unit_grid();
        for &a in &grid {
            assert!((t_cos(a, 1.0).unwrap() - a).abs() < 1e-12);
            for &b in &grid {
                let t = t_cos(a, b).unwrap();
                assert!((t - t_cos(b, a).unwrap()).abs() < 1e-15);
                assert!(t <= a.min(b) + 1e-15);
            }
        }
        // monotone in each argument on a coarser grid
        for i in 0..20 {
            for j in 0..20 {
                let a = i as f64 / 19.0;
                let b = j as f64 / 19.0;
                let t = t_cos(a, b).unwrap();
                if i + 1 < 20 {
                    assert!(t_cos((i + 1) as f64 / 19.0, b).unwrap() + 1e-15 >= t);
                }
                if j + 1 < 20 {
                    assert!(t_cos(a, (j + 1) as f64 / 19.0).unwrap() + 1e-15 >= t);
                }
            }
        }
    }

    fn candidate_set(rows: &[Vec<f64>], m: usize) -> CandidateSet {
        CandidateSet {
            rows: FeatureMatrix::from_rows(rows, m).unwrap(),
            provenance: Provenance::Mock,
        }
    }

    fn ranges(mins: &[f64], maxs: &[f64]) -> ScalerParams {
        ScalerParams {
            mins: mins.to_vec(),
            maxs: maxs.to_vec(),
        }
    }

    #[test]
    fn stage1_rejects_non_finite() {
        let c = candidate_set(&[vec![f64::NAN, 0.5]], 2);
        let report = stage1_filter(&c, 2, &ranges(&[0.0, 0.0], &[1.0, 1.0]));
        assert_eq!(report.rejected.non_finite, 1);
        assert_eq!(report.accepted.rows.n_rows(), 0);
    }

    #[test]
    fn stage1_dedups_exact_rows() {
        let c = candidate_set(&[vec![0.5, 0.5], vec![0.5, 0.5]], 2);
        let report = stage1_filter(&c, 2, &ranges(&[0.0, 0.0], &[1.0, 1.0]));
        assert_eq!(report.rejected.duplicate, 1);
        assert_eq!(report.accepted.rows.n_rows(), 1);
    }

    #[test]
    fn stage1_rejects_out_of_range() {
        let c = candidate_set(&[vec![10.0, 0.5]], 2);
        let report = stage1_filter(&c, 2, &ranges(&[0.0, 0.0], &[1.0, 1.0]));
        assert_eq!(report.rejected.out_of_range, 1);
    }

    #[test]
    fn stage1_allows_margin() {
        // 10% of span beyond the max is still acceptable
        let c = candidate_set(&[vec![1.05, 0.5]], 2);
        let report = stage1_filter(&c, 2, &ranges(&[0.0, 0.0], &[1.0, 1.0]));
        assert_eq!(report.rejected.total(), 0);
        assert_eq!(report.accepted.rows.n_rows(), 1);
    }

    fn toy_universe() -> InformationSystem {
        let accepted = candidate_set(&[vec![0.9, 0.9], vec![0.8, 0.1], vec![0.2, 0.9]], 2);
        let pseudo = PseudoAnomalySet::new(
            vec![0, 1],
            FeatureMatrix::from_rows(&[vec![0.7, 0.7], vec![0.6, 0.2]], 2).unwrap(),
        )
        .unwrap();
        let train = FeatureMatrix::from_rows(
            &[
                vec![0.1, 0.1],
                vec![0.15, 0.12],
                vec![0.12, 0.2],
                vec![0.2, 0.15],
                vec![0.11, 0.16],
            ],
            2,
        )
        .unwrap();
        build_universe(&accepted, &pseudo, &train).unwrap()
    }

    #[test]
    fn universe_counts_and_origins() {
        let sys = toy_universe();
        assert_eq!(sys.len(), 10);
        assert_eq!(sys.indices_of(Origin::Candidate), vec![0, 1, 2]);
        assert_eq!(sys.indices_of(Origin::Pseudo), vec![3, 4]);
        assert_eq!(sys.indices_of(Origin::Train).len(), 5);
    }

    #[test]
    fn universe_scaling_attains_bounds() {
        let sys = toy_universe();
        for j in 0..2 {
            let col: Vec<f64> = sys.scaled.rows().map(|r| r[j]).collect();
            assert_eq!(col.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
            assert_eq!(col.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
        }
    }

    #[test]
    fn universe_constant_column_is_half() {
        let accepted = candidate_set(&[vec![3.0, 1.0]], 2);
        let pseudo = PseudoAnomalySet::new(
            vec![0],
            FeatureMatrix::from_rows(&[vec![3.0, 2.0]], 2).unwrap(),
        )
        .unwrap();
        let train = FeatureMatrix::from_rows(&[vec![3.0, 0.0]], 2).unwrap();
        let sys = build_universe(&accepted, &pseudo, &train).unwrap();
        for row in sys.scaled.rows() {
            assert_eq!(row[0], 0.5);
        }
    }

    #[test]
    fn relation_reflexive_and_analytic() {
        let sys = toy_universe();
        let rel = fuzzy_relation(&sys, 0.5).unwrap();
        for i in 0..rel.len() {
            assert_eq!(rel.get(i, i), 1.0);
        }
        // identical rows relate at exactly 1
        let accepted = candidate_set(&[vec![0.4, 0.4]], 2);
        let pseudo = PseudoAnomalySet::new(
            vec![0],
            FeatureMatrix::from_rows(&[vec![0.4, 0.4]], 2).unwrap(),
        )
        .unwrap();
        let train = FeatureMatrix::from_rows(&[vec![0.0, 1.0]], 2).unwrap();
        let sys = build_universe(&accepted, &pseudo, &train).unwrap();
        let rel = fuzzy_relation(&sys, 1.0).unwrap();
        assert_eq!(rel.get(0, 1), 1.0);
    }

    #[test]
    fn relation_exact_kernel_value() {
        // two 1-D points with squared distance equal to delta
        let accepted = candidate_set(&[vec![0.0]], 1);
        let pseudo =
            PseudoAnomalySet::new(vec![0], FeatureMatrix::from_rows(&[vec![1.0]], 1).unwrap())
                .unwrap();
        let train = FeatureMatrix::from_rows(&[vec![0.5]], 1).unwrap();
        let sys = build_universe(&accepted, &pseudo, &train).unwrap();
        let rel = fuzzy_relation(&sys, 1.0).unwrap();
        assert!((rel.get(0, 1) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn approximations_single_row_universe() {
        let rel = RelationMatrix::from_entries(1, vec![1.0], 1.0).unwrap();
        let approx = granule_approximations(&rel, 0).unwrap();
        assert_eq!(approx.lower, vec![1.0]);
        assert_eq!(approx.upper, vec![1.0]);
    }

    #[test]
    fn approximations_crisp_identity_relation() {
        let n = 4;
        let mut r = vec![0.0; n * n];
        for i in 0..n {
            r[i * n + i] = 1.0;
        }
        let rel = RelationMatrix::from_entries(n, r, 1.0).unwrap();
        for i in 0..n {
            let approx = granule_approximations(&rel, i).unwrap();
            for x in 0..n {
                assert!((approx.lower[x] - rel.get(i, x)).abs() < 1e-15);
                assert!((approx.upper[x] - rel.get(i, x)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sandwich_on_random_reflexive_relation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let n = 4;
            let mut r = vec![0.0; n * n];
            for i in 0..n {
                r[i * n + i] = 1.0;
                for j in (i + 1)..n {
                    let v: f64 = rng.random_range(0.0..1.0);
                    r[i * n + j] = v;
                    r[j * n + i] = v;
                }
            }
            let rel = RelationMatrix::from_entries(n, r, 1.0).unwrap();
            for i in 0..n {
                let approx = granule_approximations(&rel, i).unwrap();
                for x in 0..n {
                    let g = rel.get(i, x);
                    assert!(approx.lower[x] <= g + 1e-12);
                    assert!(g <= approx.upper[x] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn uncertainty_worked_example() {
        assert_eq!(approximation_accuracy(1.0, 2.0), 0.5);
        // lambda -> 1 with alpha = 0.5 gives 0.5; lambda -> 0 gives -> 1
        assert!((weighted_alpha_prime(1.0, 0.5) - 0.5).abs() < 1e-15);
        assert!((weighted_alpha_prime(1e-9, 0.5) - 1.0).abs() < 1e-8);
        assert_eq!(weighted_alpha_prime(1.0, 1.0), 0.0);
    }

    #[test]
    fn uncertainty_invariants_on_random_universes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let n_cand = rng.random_range(1..5);
            let n_pseudo = rng.random_range(1..4);
            let n_train = rng.random_range(1..10);
            let m = rng.random_range(1..5);
            let rand_rows = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<Vec<f64>> {
                (0..n)
                    .map(|_| (0..m).map(|_| rng.random_range(-2.0..2.0)).collect())
                    .collect()
            };
            let accepted = candidate_set(&rand_rows(&mut rng, n_cand), m);
            let pseudo = PseudoAnomalySet::new(
                (0..n_pseudo).collect(),
                FeatureMatrix::from_rows(&rand_rows(&mut rng, n_pseudo), m).unwrap(),
            )
            .unwrap();
            let train = FeatureMatrix::from_rows(&rand_rows(&mut rng, n_train), m).unwrap();
            let sys = build_universe(&accepted, &pseudo, &train).unwrap();
            let delta = rng.random_range(0.05..2.0);
            let rel = fuzzy_relation(&sys, delta).unwrap();
            let unc = weighted_uncertainty(&rel);
            let n_u = sys.len() as f64;
            for i in 0..sys.len() {
                assert!((0.0..=1.0).contains(&unc.alpha[i]), "alpha {}", unc.alpha[i]);
                assert!(
                    unc.lambda[i] >= 1.0 / n_u - 1e-12 && unc.lambda[i] <= 1.0 + 1e-12,
                    "lambda {}",
                    unc.lambda[i]
                );
                assert!(
                    unc.alpha_prime[i] >= -1e-12 && unc.alpha_prime[i] < 1.0,
                    "alpha' {}",
                    unc.alpha_prime[i]
                );
            }
        }
    }

    fn hand_universe(origins: &[Origin]) -> InformationSystem {
        let n = origins.len();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        InformationSystem {
            scaled: FeatureMatrix::from_rows(&rows, 1).unwrap(),
            raw: FeatureMatrix::from_rows(&rows, 1).unwrap(),
            origin: origins.to_vec(),
        }
    }

    #[test]
    fn stage2_relaxation_reaches_both_candidates() {
        use Origin::*;
        let sys = hand_universe(&[Candidate, Candidate, Pseudo, Train, Train]);
        let unc = UncertaintyVector {
            alpha: vec![0.5; 5],
            lambda: vec![0.5; 5],
            alpha_prime: vec![0.9, 0.7, 0.6, 0.2, 0.1],
        };
        let sel = stage2_select(&unc, &sys, 2, 0.25).unwrap();
        assert_eq!(sel.universe_indices, vec![0, 1]);
        // hand simulation: mean 0.5, sigma sqrt(0.092); ten relax steps land
        // between 0.6 and 0.7
        assert!(sel.final_threshold > 0.6 && sel.final_threshold <= 0.7);
    }

    #[test]
    fn stage2_returns_all_when_target_collapses() {
        use Origin::*;
        let sys = hand_universe(&[Candidate, Candidate, Pseudo, Train]);
        let unc = UncertaintyVector {
            alpha: vec![0.5; 4],
            lambda: vec![0.5; 4],
            alpha_prime: vec![0.9, 0.8, 0.1, 0.05],
        };
        let sel = stage2_select(&unc, &sys, 10, 0.25).unwrap();
        assert_eq!(sel.universe_indices, vec![0, 1]);
    }

    #[test]
    fn stage2_no_candidates_errors() {
        use Origin::*;
        let sys = hand_universe(&[Pseudo, Train]);
        let unc = UncertaintyVector {
            alpha: vec![0.5; 2],
            lambda: vec![0.5; 2],
            alpha_prime: vec![0.5, 0.5],
        };
        assert!(matches!(
            stage2_select(&unc, &sys, 1, 0.25),
            Err(Error::NoCandidates)
        ));
    }

    #[test]
    fn stage2_caps_by_descending_alpha_prime() {
        use Origin::*;
        let sys = hand_universe(&[Candidate, Candidate, Candidate, Pseudo]);
        let unc = UncertaintyVector {
            alpha: vec![0.5; 4],
            lambda: vec![0.5; 4],
            alpha_prime: vec![0.7, 0.9, 0.8, 0.0],
        };
        let sel = stage2_select(&unc, &sys, 2, 0.25).unwrap();
        assert_eq!(sel.universe_indices, vec![1, 2]);
    }

    #[test]
    fn stage2_selection_monotone_in_threshold() {
        let ap = [0.9, 0.7, 0.5, 0.3];
        let mut prev: Vec<usize> = vec![];
        for p3 in [1.0, 0.8, 0.6, 0.4, 0.2] {
            let cur: Vec<usize> = (0..4).filter(|&i| ap[i] >= p3).collect();
            for idx in &prev {
                assert!(cur.contains(idx));
            }
            prev = cur;
        }
    }

    #[test]
    fn literal_scos_changes_lower_approximations() {
        let sys = toy_universe();
        let rel = fuzzy_relation(&sys, 0.5).unwrap();
        let dual = weighted_uncertainty_with(&rel, ScosForm::Dual);
        let literal = weighted_uncertainty_with(&rel, ScosForm::Literal);
        assert_ne!(dual.alpha, literal.alpha);
        // upper approximations are shared, so lambda is unchanged
        assert_eq!(dual.lambda, literal.lambda);
    }

    #[test]
    fn transitivity_of_gaussian_relation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..5 {
            let n = rng.random_range(3..10);
            let m = rng.random_range(1..4);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..m).map(|_| rng.random_range(0.0..1.0)).collect())
                .collect();
            let sys = InformationSystem {
                scaled: FeatureMatrix::from_rows(&rows, m).unwrap(),
                raw: FeatureMatrix::from_rows(&rows, m).unwrap(),
                origin: vec![Origin::Train; n],
            };
            let rel = fuzzy_relation(&sys, rng.random_range(0.05..2.0)).unwrap();
            for x in 0..n {
                for y in 0..n {
                    for z in 0..n {
                        let lhs = t_cos(rel.get(x, y), rel.get(y, z)).unwrap();
                        assert!(lhs <= rel.get(x, z) + 1e-12);
                    }
                }
            }
        }
    }
}
