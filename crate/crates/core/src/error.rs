//! Crate-wide error type.

use std::path::PathBuf;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse error in {path} at row {row}, column {column}: {message}")]
    CsvParse {
        path: PathBuf,
        /// 1-based data row number (header excluded).
        row: usize,
        /// Column name from the header.
        column: String,
        message: String,
    },

    #[error("csv structure error in {path}: {message}")]
    CsvStructure { path: PathBuf, message: String },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty matrix where at least one row is required")]
    EmptyMatrix,

    #[error("empty pseudo-anomaly set")]
    EmptyPseudoSet,

    #[error("invalid parameter {name}: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("knn requires k <= training rows: k={k}, n_train={n_train}")]
    KnnTooFewRows { k: usize, n_train: usize },

    #[error("score file {path}: expected {expected} scores, found {found}")]
    ScoreLengthMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("score file {path}: line {line} is not a finite number: {content:?}")]
    ScoreParse {
        path: PathBuf,
        line: usize,
        content: String,
    },

    #[error("prompt exceeds token budget of {budget}: trim section {section:?} ({tokens} tokens total)")]
    PromptTooLarge {
        budget: usize,
        tokens: usize,
        section: String,
    },

    #[error("no parseable candidate rows in response:\n{raw}")]
    EmptyParse { raw: String },

    #[error("api key env var {env_var} is not set")]
    MissingApiKey { env_var: String },

    #[error("llm authentication failed (http {status}): {body}")]
    LlmAuth { status: u16, body: String },

    #[error("llm request failed after {attempts} attempts: {last_error}")]
    LlmRetriesExhausted { attempts: usize, last_error: String },

    #[error("malformed llm response: {0}")]
    LlmMalformedResponse(String),

    #[error("llm transport error: {0}")]
    LlmTransport(String),

    #[error("candidate generation needs at least two pseudo rows for cutmix")]
    CutmixNeedsTwoParents,

    #[error("mock generator exhausted its resampling budget ({budget} tries) for row {row}")]
    MockResampleBudget { budget: usize, row: usize },

    #[error("no candidate rows in the universe")]
    NoCandidates,

    #[error("universe index {index} out of range (N_u = {n})")]
    UniverseIndexOutOfRange { index: usize, n: usize },

    #[error("value {value} outside [0,1] passed to {op}")]
    UnitIntervalViolation { op: &'static str, value: f64 },

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("training requires nonempty {class} set")]
    EmptyTrainingClass { class: &'static str },

    #[error("metric {metric} needs both classes present in labels")]
    SingleClassLabels { metric: &'static str },

    #[error("metric {metric} needs at least one positive label")]
    NoPositives { metric: &'static str },

    #[error("model file {path}: {message}")]
    ModelFormat { path: PathBuf, message: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors that indicate a bad configuration rather than a
    /// runtime failure (the CLI maps these to exit code 2).
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::MissingApiKey { .. } | Error::Schema(_) => true,
            Error::InvalidParameter { .. } => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
