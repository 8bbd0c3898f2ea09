//! Pseudo-label-guided synthetic anomaly generation for tabular anomaly
//! detection.
//!
//! The pipeline scores unlabeled test data with an unsupervised detector,
//! pseudo-labels the top scorers, synthesizes candidate anomalies guided by
//! feature-level ECDF rarity (via a chat endpoint or a deterministic local
//! generator), filters them with a structural pass and a fuzzy-rough-set
//! uncertainty pass, and trains a focal-loss MLP on training normals plus
//! the selected synthetic anomalies.

pub mod classifier;
pub mod dataset;
pub mod detector;
mod error;
pub mod generation;
pub mod metrics;
pub mod pipeline;
pub mod rarity;
pub mod selection;

pub use error::{Error, Result};
