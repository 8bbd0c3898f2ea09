//! Candidate anomaly generation: prompt construction, the chat-completions
//! client, raw-response parsing, the deterministic offline generator, and
//! the three heuristic baselines.

mod baseline;
mod llm;
mod mock;
mod prompt;

pub use baseline::{baseline_generate, BaselineKind, BaselineParams};
pub use llm::{
    llm_generate, llm_generate_batched, ChatRequest, ChatTransport, HttpTransport, LlmConfig,
    TransportError, LLM_BATCH_ROWS,
};
pub use mock::mock_generate;
pub use prompt::{build_prompt, build_prompt_with_budget, PromptBundle, DEFAULT_TOKEN_BUDGET};

use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};

/// Where a candidate set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Llm,
    Mock,
    GaussianNoise,
    Cutout,
    Cutmix,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Provenance::Llm => "llm",
            Provenance::Mock => "mock",
            Provenance::GaussianNoise => "gaussian_noise",
            Provenance::Cutout => "cutout",
            Provenance::Cutmix => "cutmix",
        };
        f.write_str(s)
    }
}

/// Generated candidate anomaly rows. Every row is finite with exactly m
/// columns; all candidates carry the anomaly label by construction.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub rows: FeatureMatrix,
    pub provenance: Provenance,
}

/// Outcome of parsing a raw response into candidate rows.
#[derive(Debug, Clone)]
pub struct ParsedCandidates {
    pub set: CandidateSet,
    /// Numeric lines with the wrong number of fields.
    pub dropped_wrong_arity: usize,
    /// Prose, fences, and blank lines.
    pub dropped_prose: usize,
}

/// Parse raw generator output into rows with exactly `feature_count`
/// finite numeric fields.
///
/// Code fences and blank lines are stripped. A prose line is any line
/// whose comma-split fields do not all parse as finite floats. Numeric
/// lines with the wrong arity are dropped and counted.
pub fn parse_candidates(raw: &str, feature_count: usize) -> Result<ParsedCandidates> {
    let mut rows = FeatureMatrix::empty(feature_count);
    let mut dropped_wrong_arity = 0;
    let mut dropped_prose = 0;

    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("```") {
            dropped_prose += 1;
            continue;
        }
        let fields: Option<Vec<f64>> = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
            })
            .collect();
        match fields {
            None => dropped_prose += 1,
            Some(values) if values.len() == feature_count => {
                rows.push_row(&values)?;
            }
            Some(_) => dropped_wrong_arity += 1,
        }
    }

    if rows.is_empty() {
        return Err(Error::EmptyParse {
            raw: raw.to_string(),
        });
    }
    Ok(ParsedCandidates {
        set: CandidateSet {
            rows,
            provenance: Provenance::Llm,
        },
        dropped_wrong_arity,
        dropped_prose,
    })
}
