//! Tabular dataset loading, validation, and min-max scaling.
//!
//! Every downstream module consumes the row-major [`FeatureMatrix`] defined
//! here. CSV ingestion is strict: one header row, comma separation, every
//! feature cell a finite float, label cells (when configured) 0/1 integers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{io_err, Error, Result};

/// Column layout shared by every stage: feature names plus the optional
/// label column they were split from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSchema {
    feature_names: Vec<String>,
    label_column: Option<String>,
}

impl DatasetSchema {
    pub fn new(feature_names: Vec<String>, label_column: Option<String>) -> Result<Self> {
        if feature_names.is_empty() {
            return Err(Error::Schema("at least one feature column required".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name {name:?}")));
            }
        }
        if let Some(label) = &label_column {
            if seen.contains(label.as_str()) {
                return Err(Error::Schema(format!(
                    "label column {label:?} collides with a feature name"
                )));
            }
        }
        Ok(Self {
            feature_names,
            label_column,
        })
    }

    /// Feature dimensionality m.
    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn label_column(&self) -> Option<&str> {
        self.label_column.as_deref()
    }

    /// Synthesize a schema with generated names `f0..f{m-1}`.
    pub fn anonymous(m: usize) -> Self {
        Self {
            feature_names: (0..m).map(|j| format!("f{j}")).collect(),
            label_column: None,
        }
    }
}

/// Dense row-major n x m matrix of finite feature values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_rows * n_cols {
            return Err(Error::DimensionMismatch {
                expected: n_rows * n_cols,
                got: values.len(),
            });
        }
        Ok(Self {
            n_rows,
            n_cols,
            values,
        })
    }

    /// Empty matrix with a fixed column count.
    pub fn empty(n_cols: usize) -> Self {
        Self {
            n_rows: 0,
            n_cols,
            values: Vec::new(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], n_cols: usize) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(Error::DimensionMismatch {
                    expected: n_cols,
                    got: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            n_rows: rows.len(),
            n_cols,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_cols.max(1))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.n_cols {
            return Err(Error::DimensionMismatch {
                expected: self.n_cols,
                got: row.len(),
            });
        }
        self.values.extend_from_slice(row);
        self.n_rows += 1;
        Ok(())
    }

    /// Stack matrices vertically; all must share the column count.
    pub fn vstack(parts: &[&FeatureMatrix]) -> Result<FeatureMatrix> {
        let n_cols = parts
            .iter()
            .find(|p| !p.is_empty())
            .map(|p| p.n_cols)
            .or_else(|| parts.first().map(|p| p.n_cols))
            .unwrap_or(0);
        let mut out = FeatureMatrix::empty(n_cols);
        for part in parts {
            if part.is_empty() {
                continue;
            }
            if part.n_cols != n_cols {
                return Err(Error::DimensionMismatch {
                    expected: n_cols,
                    got: part.n_cols,
                });
            }
            out.values.extend_from_slice(&part.values);
            out.n_rows += part.n_rows;
        }
        Ok(out)
    }

    /// Copy of the selected rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(indices.len() * self.n_cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            n_rows: indices.len(),
            n_cols: self.n_cols,
            values,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Feature matrix plus binary labels (0 normal, 1 anomaly).
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub matrix: FeatureMatrix,
    pub labels: Vec<u8>,
}

impl LabeledDataset {
    pub fn anomaly_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

/// Result of loading a CSV: the schema recovered from the header and the
/// data split into features and labels.
#[derive(Debug, Clone)]
pub struct LoadedCsv {
    pub schema: DatasetSchema,
    pub data: LabeledDataset,
}

/// Per-feature (min, max) pairs fit by [`fit_minmax`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScalerParams {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl ScalerParams {
    pub fn feature_count(&self) -> usize {
        self.mins.len()
    }
}

/// Load a CSV file. When `label_column` is given it must appear in the
/// header; its cells must parse as 0/1 and are stripped from the features.
/// Without it, all labels are 0.
pub fn load_csv(path: &Path, label_column: Option<&str>) -> Result<LoadedCsv> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::CsvStructure {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::CsvStructure {
            path: path.to_path_buf(),
            message: format!("missing header row: {e}"),
        })?
        .iter()
        .map(|h| h.to_string())
        .collect();

    let label_idx = match label_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Schema(format!("label column {name:?} not in header")))?,
        ),
        None => None,
    };

    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let schema = DatasetSchema::new(feature_names.clone(), label_column.map(str::to_string))?;
    let m = schema.feature_count();

    let mut matrix = FeatureMatrix::empty(m);
    let mut labels = Vec::new();
    let mut row_buf = Vec::with_capacity(m);

    for (row_no, record) in reader.records().enumerate() {
        let row = row_no + 1;
        let record = record.map_err(|e| Error::CsvStructure {
            path: path.to_path_buf(),
            message: format!("row {row}: {e}"),
        })?;
        if record.len() != headers.len() {
            return Err(Error::CsvStructure {
                path: path.to_path_buf(),
                message: format!(
                    "row {row} has {} cells, header has {}",
                    record.len(),
                    headers.len()
                ),
            });
        }
        row_buf.clear();
        for (col_idx, cell) in record.iter().enumerate() {
            if Some(col_idx) == label_idx {
                let label: i64 = cell.parse().map_err(|_| Error::CsvParse {
                    path: path.to_path_buf(),
                    row,
                    column: headers[col_idx].clone(),
                    message: format!("label value {cell:?} is not an integer"),
                })?;
                if label != 0 && label != 1 {
                    return Err(Error::CsvParse {
                        path: path.to_path_buf(),
                        row,
                        column: headers[col_idx].clone(),
                        message: format!("label value {label} is not 0 or 1"),
                    });
                }
                labels.push(label as u8);
            } else {
                let value: f64 = cell.parse().map_err(|_| Error::CsvParse {
                    path: path.to_path_buf(),
                    row,
                    column: headers[col_idx].clone(),
                    message: format!("cell {cell:?} is not a number"),
                })?;
                if !value.is_finite() {
                    return Err(Error::CsvParse {
                        path: path.to_path_buf(),
                        row,
                        column: headers[col_idx].clone(),
                        message: format!("cell {cell:?} is not finite"),
                    });
                }
                row_buf.push(value);
            }
        }
        matrix.push_row(&row_buf)?;
    }

    if label_idx.is_none() {
        labels = vec![0; matrix.n_rows()];
    }

    Ok(LoadedCsv {
        schema,
        data: LabeledDataset { matrix, labels },
    })
}

/// Format a float with 17 significant digits so the textual form
/// round-trips losslessly.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write a matrix (and optional 0/1 label column appended last) as CSV.
pub fn write_csv(
    path: &Path,
    schema: &DatasetSchema,
    matrix: &FeatureMatrix,
    labels: Option<&[u8]>,
) -> Result<()> {
    let mut out = String::new();
    let mut header: Vec<&str> = schema.feature_names().iter().map(String::as_str).collect();
    if labels.is_some() {
        header.push(schema.label_column().unwrap_or("label"));
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, row) in matrix.rows().enumerate() {
        if matrix.is_empty() {
            break;
        }
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", format_float(*v));
        }
        if let Some(labels) = labels {
            let _ = write!(out, ",{}", labels[i]);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Column-wise min/max of a nonempty matrix.
pub fn fit_minmax(matrix: &FeatureMatrix) -> Result<ScalerParams> {
    if matrix.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let m = matrix.n_cols();
    let mut mins = vec![f64::INFINITY; m];
    let mut maxs = vec![f64::NEG_INFINITY; m];
    for row in matrix.rows() {
        for j in 0..m {
            mins[j] = mins[j].min(row[j]);
            maxs[j] = maxs[j].max(row[j]);
        }
    }
    Ok(ScalerParams { mins, maxs })
}

/// Map each value to `(v - min_j) / (max_j - min_j)`, clamped to [0,1].
/// Constant features (min == max) map every value to 0.5.
pub fn apply_minmax(params: &ScalerParams, matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
    let m = params.feature_count();
    if matrix.n_cols() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: matrix.n_cols(),
        });
    }
    let mut values = Vec::with_capacity(matrix.values().len());
    for row in matrix.rows() {
        if matrix.is_empty() {
            break;
        }
        for (j, v) in row.iter().enumerate() {
            let span = params.maxs[j] - params.mins[j];
            let scaled = if span == 0.0 {
                0.5
            } else {
                ((v - params.mins[j]) / span).clamp(0.0, 1.0)
            };
            values.push(scaled);
        }
    }
    FeatureMatrix::new(matrix.n_rows(), m, values)
}
