use serde::{Deserialize, Serialize};

use super::{
    build_prompt, report::TOKENIZATION_SCHEMA, run_permutation_experiment, HarnessError,
    PermutationPlan, Placement, RunOptions,
};
use crate::backend::Backend;
use crate::dataset::Dataset;
use crate::metrics::pearson;
use crate::normalizer::{Delimiter, FormatConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizationRow {
    pub delimiter: Delimiter,
    /// Mean prompt length in backend tokens over the dataset, stored order.
    pub mean_token_count: f64,
    pub oaa: f64,
    pub opa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizationReport {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    pub backend_id: String,
    pub ratio: f64,
    pub rows: Vec<TokenizationRow>,
    /// Correlation between mean token count and OAA across delimiters.
    pub pearson_r: f64,
}

/// For each delimiter, measure prompt length and permutation accuracy, then
/// correlate the two.
pub fn run_tokenization_study<B: Backend + ?Sized>(
    dataset: &Dataset,
    backend: &B,
    delimiters: &[Delimiter],
    ratio: f64,
    plan: &PermutationPlan,
    opts: &RunOptions,
) -> Result<TokenizationReport, HarnessError> {
    if delimiters.len() < 2 {
        return Err(HarnessError::TooFewDelimiters(delimiters.len()));
    }
    if dataset.is_empty() {
        return Err(HarnessError::EmptyPlan("dataset has no samples"));
    }
    let formats = crate::normalizer::candidate_formats(delimiters, ratio)?;
    let mut rows = Vec::with_capacity(formats.len());
    for format in &formats {
        rows.push(study_one(dataset, backend, format, plan, opts)?);
    }
    let tokens: Vec<f64> = rows.iter().map(|r| r.mean_token_count).collect();
    let oaa: Vec<f64> = rows.iter().map(|r| r.oaa).collect();
    let pearson_r = pearson(&tokens, &oaa)?;
    Ok(TokenizationReport {
        schema: TOKENIZATION_SCHEMA.into(),
        created_at: None,
        backend_id: backend.id(),
        ratio,
        rows,
        pearson_r,
    })
}

fn study_one<B: Backend + ?Sized>(
    dataset: &Dataset,
    backend: &B,
    format: &FormatConfig,
    plan: &PermutationPlan,
    opts: &RunOptions,
) -> Result<TokenizationRow, HarnessError> {
    let mut total = 0usize;
    for sample in &dataset.samples {
        let prompt = build_prompt(sample, Placement::AsStored, format, opts)?;
        total += backend
            .tokenize_count(&prompt.text)
            .map_err(|source| HarnessError::Backend {
                prompt_id: format!("tokenize|{}|fmt={}", sample.id(), format.tag()),
                source,
            })?;
    }
    let result = run_permutation_experiment(dataset, backend, format, plan, opts)?;
    Ok(TokenizationRow {
        delimiter: format.delimiter,
        mean_token_count: total as f64 / dataset.len() as f64,
        oaa: result.summary.oaa,
        opa: result.summary.opa,
    })
}
