//! Heuristic baseline generators: Gaussian noise, cutout, and cutmix,
//! adapted to tables as random feature-index operations over pseudo rows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::FeatureMatrix;
use crate::detector::PseudoAnomalySet;
use crate::error::{Error, Result};
use crate::generation::{CandidateSet, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    GaussianNoise,
    Cutout,
    Cutmix,
}

#[derive(Debug, Clone, Copy)]
pub struct BaselineParams {
    /// Noise scale relative to each feature's training standard deviation.
    pub sigma: f64,
    /// Fraction of features masked by cutout/cutmix.
    pub mask_fraction: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            mask_fraction: 0.25,
        }
    }
}

/// Generate `count` candidates from the pseudo rows:
///
/// - gaussian_noise: pseudo row plus per-feature noise scaled by
///   `sigma * std_j` of the training data;
/// - cutout: `ceil(mask_fraction * m)` random features replaced by the
///   training medians;
/// - cutmix: the same number of features of one pseudo row replaced by
///   those of another pseudo row.
pub fn baseline_generate(
    kind: BaselineKind,
    pseudo: &PseudoAnomalySet,
    train: &FeatureMatrix,
    count: usize,
    params: &BaselineParams,
    seed: u64,
) -> Result<CandidateSet> {
    if pseudo.is_empty() {
        return Err(Error::EmptyPseudoSet);
    }
    if count == 0 {
        return Err(Error::InvalidParameter {
            name: "count",
            message: "must be at least 1".into(),
        });
    }
    if kind == BaselineKind::Cutmix && pseudo.len() < 2 {
        return Err(Error::CutmixNeedsTwoParents);
    }
    if params.sigma.is_nan() || params.sigma < 0.0 {
        return Err(Error::InvalidParameter {
            name: "sigma",
            message: format!("must be >= 0, got {}", params.sigma),
        });
    }
    if !(0.0 < params.mask_fraction && params.mask_fraction < 1.0) {
        return Err(Error::InvalidParameter {
            name: "mask_fraction",
            message: format!("must be in (0, 1), got {}", params.mask_fraction),
        });
    }

    let m = pseudo.rows.n_cols();
    let n_pseudo = pseudo.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = FeatureMatrix::empty(m);
    let mask_count = (params.mask_fraction * m as f64).ceil() as usize;
    let mask_count = mask_count.clamp(1, m);

    let feature_stds = column_stds(train);
    let feature_medians = column_medians(train);
    let mut feature_order: Vec<usize> = (0..m).collect();
    let mut row = vec![0.0; m];

    for _ in 0..count {
        let parent = pseudo.rows.row(rng.random_range(0..n_pseudo));
        match kind {
            BaselineKind::GaussianNoise => {
                for j in 0..m {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    row[j] = parent[j] + params.sigma * feature_stds[j] * z;
                }
            }
            BaselineKind::Cutout => {
                row.copy_from_slice(parent);
                shuffle_prefix(&mut feature_order, mask_count, &mut rng);
                for &j in &feature_order[..mask_count] {
                    row[j] = feature_medians[j];
                }
            }
            BaselineKind::Cutmix => {
                row.copy_from_slice(parent);
                let donor_idx = {
                    // distinct second parent
                    let parent_idx = pseudo
                        .rows
                        .rows()
                        .position(|r| std::ptr::eq(r.as_ptr(), parent.as_ptr()))
                        .unwrap_or(0);
                    let pick = rng.random_range(0..n_pseudo - 1);
                    if pick >= parent_idx {
                        pick + 1
                    } else {
                        pick
                    }
                };
                let donor = pseudo.rows.row(donor_idx);
                shuffle_prefix(&mut feature_order, mask_count, &mut rng);
                for &j in &feature_order[..mask_count] {
                    row[j] = donor[j];
                }
            }
        }
        rows.push_row(&row)?;
    }

    Ok(CandidateSet {
        rows,
        provenance: match kind {
            BaselineKind::GaussianNoise => Provenance::GaussianNoise,
            BaselineKind::Cutout => Provenance::Cutout,
            BaselineKind::Cutmix => Provenance::Cutmix,
        },
    })
}

/// Partial Fisher-Yates: randomizes the first `k` positions.
fn shuffle_prefix(order: &mut [usize], k: usize, rng: &mut ChaCha8Rng) {
    let m = order.len();
    for i in 0..k.min(m.saturating_sub(1)) {
        let j = rng.random_range(i..m);
        order.swap(i, j);
    }
}

fn column_stds(matrix: &FeatureMatrix) -> Vec<f64> {
    let m = matrix.n_cols();
    let n = matrix.n_rows().max(1) as f64;
    let mut means = vec![0.0; m];
    for row in matrix.rows() {
        for j in 0..m {
            means[j] += row[j];
        }
    }
    for mean in &mut means {
        *mean /= n;
    }
    let mut vars = vec![0.0; m];
    for row in matrix.rows() {
        for j in 0..m {
            let d = row[j] - means[j];
            vars[j] += d * d;
        }
    }
    vars.iter().map(|v| (v / n).sqrt()).collect()
}

fn column_medians(matrix: &FeatureMatrix) -> Vec<f64> {
    let m = matrix.n_cols();
    let mut medians = vec![0.0; m];
    for (j, median) in medians.iter_mut().enumerate() {
        let mut col: Vec<f64> = matrix.rows().map(|r| r[j]).collect();
        if col.is_empty() {
            continue;
        }
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = col.len() / 2;
        *median = if col.len() % 2 == 1 {
            col[mid]
        } else {
            0.5 * (col[mid - 1] + col[mid])
        };
    }
    medians
}
