//! Unsupervised anomaly scoring and pseudo-anomaly selection.
//!
//! Scores come from a built-in detector (mean k-NN distance or summed ECDF
//! tail log-rarity) or from an external score file produced by any model,
//! one float per test row. The top p1% of test rows become pseudo-anomalies.

use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::{apply_minmax, fit_minmax, FeatureMatrix};
use crate::error::{io_err, Error, Result};
use crate::rarity;

/// Scoring backend.
#[derive(Debug, Clone, PartialEq)]
pub enum DetectorVariant {
    /// Mean Euclidean distance to the k nearest training rows.
    Knn { k: usize },
    /// Sum over features of `-ln(tau)` against train-fitted ECDFs.
    EcdfTail,
    /// Scores read from a file, one per test row.
    External { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub variant: DetectorVariant,
    /// Min-max scale train/test (fit on train) before k-NN distances.
    /// Rank-based scoring is unaffected by monotone rescaling, so this
    /// only applies to the knn variant.
    pub scale_inputs: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            variant: DetectorVariant::Knn { k: 10 },
            scale_inputs: true,
        }
    }
}

/// Anomaly scores for the test rows; higher means more anomalous.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Test rows assigned pseudo-anomaly labels, with their source indices.
#[derive(Debug, Clone)]
pub struct PseudoAnomalySet {
    indices: Vec<usize>,
    pub rows: FeatureMatrix,
}

impl PseudoAnomalySet {
    /// `indices` must be sorted ascending and distinct; `rows` holds the
    /// corresponding test rows in the same order.
    pub fn new(indices: Vec<usize>, rows: FeatureMatrix) -> Result<Self> {
        if indices.len() != rows.n_rows() {
            return Err(Error::DimensionMismatch {
                expected: indices.len(),
                got: rows.n_rows(),
            });
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter {
                name: "indices",
                message: "must be sorted ascending and distinct".into(),
            });
        }
        Ok(Self { indices, rows })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Score all test rows with the configured detector.
pub fn fit_score(
    config: &DetectorConfig,
    train: &FeatureMatrix,
    test: &FeatureMatrix,
) -> Result<ScoreVector> {
    match &config.variant {
        DetectorVariant::External { path } => load_external_scores(path, test.n_rows()),
        DetectorVariant::Knn { k } => {
            check_dims(train, test)?;
            if *k == 0 {
                return Err(Error::InvalidParameter {
                    name: "k",
                    message: "must be at least 1".into(),
                });
            }
            if *k > train.n_rows() {
                return Err(Error::KnnTooFewRows {
                    k: *k,
                    n_train: train.n_rows(),
                });
            }
            let (train_s, test_s);
            let (train_ref, test_ref) = if config.scale_inputs {
                let params = fit_minmax(train)?;
                train_s = apply_minmax(&params, train)?;
                test_s = apply_minmax(&params, test)?;
                (&train_s, &test_s)
            } else {
                (train, test)
            };
            Ok(ScoreVector {
                scores: test_ref
                    .rows()
                    .map(|row| mean_knn_distance(train_ref, row, *k))
                    .collect(),
            })
        }
        DetectorVariant::EcdfTail => {
            check_dims(train, test)?;
            if train.is_empty() {
                return Err(Error::EmptyMatrix);
            }
            let model = rarity::fit_ecdf(train)?;
            let mut scores = Vec::with_capacity(test.n_rows());
            for row in test.rows() {
                let tails = model.tail_probability(row)?;
                scores.push(tails.0.iter().map(|t| -t.ln()).sum());
            }
            Ok(ScoreVector { scores })
        }
    }
}

fn check_dims(train: &FeatureMatrix, test: &FeatureMatrix) -> Result<()> {
    if train.n_cols() != test.n_cols() {
        return Err(Error::DimensionMismatch {
            expected: train.n_cols(),
            got: test.n_cols(),
        });
    }
    Ok(())
}

fn mean_knn_distance(train: &FeatureMatrix, query: &[f64], k: usize) -> f64 {
    let mut dists: Vec<f64> = train
        .rows()
        .map(|row| {
            row.iter()
                .zip(query)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    dists[..k].iter().sum::<f64>() / k as f64
}

/// Read one float per line; length must match the test set.
pub fn load_external_scores(path: &Path, expected_len: usize) -> Result<ScoreVector> {
    let content = fs::read_to_string(path).map_err(io_err(path))?;
    let mut scores = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: f64 = line.parse().map_err(|_| Error::ScoreParse {
            path: path.to_path_buf(),
            line: i + 1,
            content: line.to_string(),
        })?;
        if !value.is_finite() {
            return Err(Error::ScoreParse {
                path: path.to_path_buf(),
                line: i + 1,
                content: line.to_string(),
            });
        }
        scores.push(value);
    }
    if scores.len() != expected_len {
        return Err(Error::ScoreLengthMismatch {
            path: path.to_path_buf(),
            expected: expected_len,
            found: scores.len(),
        });
    }
    Ok(ScoreVector { scores })
}

/// Select the top p1% highest-scoring test rows as pseudo-anomalies.
///
/// Exactly `ceil(p1/100 * N')` rows are returned; ties at the cutoff go to
/// the lower index.
pub fn select_pseudo(
    scores: &ScoreVector,
    test: &FeatureMatrix,
    p1: f64,
) -> Result<PseudoAnomalySet> {
    if !(0.0..100.0).contains(&p1) || p1 <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "p1",
            message: format!("must be in (0, 100), got {p1}"),
        });
    }
    if test.is_empty() || scores.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    if scores.len() != test.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: test.n_rows(),
            got: scores.len(),
        });
    }
    let n = scores.len();
    let k = ((p1 / 100.0) * n as f64).ceil() as usize;
    let k = k.clamp(1, n);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores.scores[b]
            .partial_cmp(&scores.scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut indices: Vec<usize> = order[..k].to_vec();
    indices.sort_unstable();
    let rows = test.select_rows(&indices);
    PseudoAnomalySet::new(indices, rows)
}
