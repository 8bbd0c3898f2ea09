//! Four-section prompt construction for candidate anomaly generation.

use std::fmt::Write as _;

use crate::dataset::{DatasetSchema, FeatureMatrix};
use crate::detector::PseudoAnomalySet;
use crate::error::{Error, Result};
use crate::rarity::ScoreRange;

/// Rough token estimate used against the prompt budget.
fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

pub const DEFAULT_TOKEN_BUDGET: usize = 12_000;

/// At most this many normal reference rows are serialized into the prompt.
const MAX_NORMAL_REFS: usize = 20;

/// The four prompt sections plus the requested row count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub task_objective: String,
    pub data_description: String,
    pub analytical_method: String,
    pub output_requirement: String,
    pub requested_count: usize,
}

impl PromptBundle {
    /// User-facing message body (everything after the system role).
    pub fn user_message(&self) -> String {
        format!(
            "## Data Description\n{}\n\n## Analytical Method\n{}\n\n## Output Requirement\n{}",
            self.data_description, self.analytical_method, self.output_requirement
        )
    }

    pub fn total_tokens(&self) -> usize {
        estimate_tokens(&self.task_objective)
            + estimate_tokens(&self.data_description)
            + estimate_tokens(&self.analytical_method)
            + estimate_tokens(&self.output_requirement)
    }
}

fn format_sig6(v: f64) -> String {
    format!("{v:.5e}")
}

fn serialize_rows(out: &mut String, rows: &FeatureMatrix, tag: &str, limit: usize) {
    for row in rows.rows().take(limit) {
        if rows.is_empty() {
            break;
        }
        let cells: Vec<String> = row.iter().map(|v| format_sig6(*v)).collect();
        let _ = writeln!(out, "{tag}: {}", cells.join(","));
    }
}

/// Assemble the prompt: role and task, serialized reference data, the
/// feature-rarity scoring method with its threshold and target score
/// range, and the strict output contract.
pub fn build_prompt(
    schema: &DatasetSchema,
    pseudo: &PseudoAnomalySet,
    normal_refs: &FeatureMatrix,
    range: ScoreRange,
    p2: f64,
    count: usize,
) -> Result<PromptBundle> {
    build_prompt_with_budget(
        schema,
        pseudo,
        normal_refs,
        range,
        p2,
        count,
        DEFAULT_TOKEN_BUDGET,
    )
}

pub fn build_prompt_with_budget(
    schema: &DatasetSchema,
    pseudo: &PseudoAnomalySet,
    normal_refs: &FeatureMatrix,
    range: ScoreRange,
    p2: f64,
    count: usize,
    token_budget: usize,
) -> Result<PromptBundle> {
    if pseudo.is_empty() {
        return Err(Error::EmptyPseudoSet);
    }
    if normal_refs.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    if count == 0 {
        return Err(Error::InvalidParameter {
            name: "count",
            message: "must be at least 1".into(),
        });
    }
    let m = schema.feature_count();

    let task_objective = "You are a tabular data generator supporting an anomaly detection \
         system. Anomalies are samples that are dissimilar to the majority of instances in the \
         dataset. Your task is to synthesize new anomalous rows that follow the analytical \
         method below."
        .to_string();

    let mut data_description = format!(
        "Each row has {m} numeric features, in this column order: {}.\n\
         Reference rows follow. Lines tagged `pseudo-anomaly` are high-confidence anomalies \
         selected by an unsupervised detector; lines tagged `normal` are ordinary training \
         samples.\n",
        schema.feature_names().join(",")
    );
    serialize_rows(&mut data_description, &pseudo.rows, "pseudo-anomaly", usize::MAX);
    serialize_rows(&mut data_description, normal_refs, "normal", MAX_NORMAL_REFS);

    let analytical_method = format!(
        "Treat each feature dimension as an independent distribution over all reference \
         values. Decouple the overall anomaly degree of a row into an accumulation of \
         feature-level rarities: a feature value is rare when its two-sided tail probability \
         under that feature's empirical distribution falls below {p2}. A row's anomaly score \
         is the number of its features that are rare. Generate rows whose anomaly scores lie \
         in the inclusive range [{lo}, {hi}], matching the scores of the pseudo-anomalies \
         above. Vary which features carry the rarity so the set is diverse.",
        lo = range.lo,
        hi = range.hi,
    );

    let output_requirement = format!(
        "Output exactly {count} rows of comma-separated numeric values, one row per line, \
         {m} values per row, in the column order given above. Output CSV lines only: no \
         header, no explanations, no markdown fences, no extra text."
    );

    let bundle = PromptBundle {
        task_objective,
        data_description,
        analytical_method,
        output_requirement,
        requested_count: count,
    };

    let tokens = bundle.total_tokens();
    if tokens > token_budget {
        let sections = [
            ("task_objective", estimate_tokens(&bundle.task_objective)),
            (
                "data_description",
                estimate_tokens(&bundle.data_description),
            ),
            (
                "analytical_method",
                estimate_tokens(&bundle.analytical_method),
            ),
            (
                "output_requirement",
                estimate_tokens(&bundle.output_requirement),
            ),
        ];
        let largest = sections.iter().max_by_key(|(_, t)| *t).unwrap();
        return Err(Error::PromptTooLarge {
            budget: token_budget,
            tokens,
            section: largest.0.to_string(),
        });
    }
    Ok(bundle)
}
