//! Experiment orchestration: gold-position permutation runs, delimiter
//! calibration, the calibrate-then-apply pipeline and tokenization studies.
//!
//! Every cell `(sample, position, seed)` builds its prompt from scratch, so
//! cells can run in any order or in parallel. Results are sorted before they
//! are aggregated or written.

use std::ops::Range;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::AttentionError;
use crate::backend::{Backend, BackendError, GenerateOptions, GenerateRequest, GoldProbe};
use crate::dataset::{
    render_kv_pairs, DatasetError, Document, FormatStyle, KvSample, QaSample, Sample,
};
use crate::metrics::MetricsError;
use crate::normalizer::{
    assemble_prompt_with_spans, normalize_document, Delimiter, FormatConfig, NormalizeError,
    PromptTemplate,
};
use crate::seed;

mod calibrate;
mod permutation;
mod report;
mod tokenization;

pub use calibrate::{
    calibrate, run_cnorm_pipeline, sweep_sample_counts, CalibrationMode, CalibrationOptions,
    CalibrationReport, CandidateSummary, CnormOutcome, SweepEntry, SweepReport,
};
pub use permutation::{
    run_permutation_experiment, Cell, ExperimentConfig, ExperimentResult, SeedBreakdown,
};
pub use report::{read_report, write_report, ReportFile, SCHEMA_PREFIX};
pub use tokenization::{run_tokenization_study, TokenizationReport, TokenizationRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("permutation plan is empty: {0}")]
    EmptyPlan(&'static str),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Normalize(#[from] NormalizeError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("backend failed on {prompt_id}: {source}")]
    Backend {
        prompt_id: String,
        #[source]
        source: BackendError,
    },
    #[error("backend {0} does not provide attention")]
    AttentionUnsupported(String),
    #[error("calibration sample count must be at least 1")]
    ZeroSamples,
    #[error("requested {requested} calibration samples but only {available} available")]
    NotEnoughSamples { requested: usize, available: usize },
    #[error("a tokenization study needs at least 2 delimiters, got {0}")]
    TooFewDelimiters(usize),
    #[error("delimiter {0} cannot format key-value identifiers")]
    UnsupportedKvDelimiter(Delimiter),
    #[error("report {path}: {reason}")]
    Report { path: String, reason: String },
}

/// What to do when the backend fails on a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailurePolicy {
    /// Count the cell as incorrect and flag it.
    #[default]
    Lenient,
    /// Abort the run.
    Strict,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub template: PromptTemplate,
    /// Seed for which sentences get rewritten when `0 < ratio < 1`.
    pub selection_seed: u64,
    pub max_tokens: u32,
    pub failure_policy: FailurePolicy,
    /// Concurrent backend calls; 1 runs serially.
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            template: PromptTemplate::base(),
            selection_seed: 0,
            max_tokens: 64,
            failure_policy: FailurePolicy::Lenient,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationPlan {
    pub positions: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Restrict the run to these samples; all samples when `None`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_ids: Option<Vec<String>>,
}

impl PermutationPlan {
    /// Every gold position `0..slots` for each seed.
    pub fn all_positions(slots: usize, seeds: Vec<u64>) -> Self {
        Self {
            positions: (0..slots).collect(),
            seeds,
            sample_ids: None,
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.positions.is_empty() {
            return Err(HarnessError::EmptyPlan("no positions"));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::EmptyPlan("no seeds"));
        }
        if matches!(&self.sample_ids, Some(ids) if ids.is_empty()) {
            return Err(HarnessError::EmptyPlan("no samples"));
        }
        let mut p = self.positions.clone();
        p.sort_unstable();
        p.dedup();
        if p.len() != self.positions.len() {
            return Err(HarnessError::InvalidPlan("duplicate positions".into()));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(HarnessError::InvalidPlan("duplicate seeds".into()));
        }
        Ok(())
    }
}

/// Identifier style used for key-value samples under a delimiter: `none`
/// is plain text, `-` the UUID layout, anything else a modified UUID.
pub fn kv_style(delimiter: Delimiter) -> Result<FormatStyle, HarnessError> {
    match delimiter {
        Delimiter::None => Ok(FormatStyle::PlainText),
        Delimiter::Char('-') => Ok(FormatStyle::Uuid),
        Delimiter::Char(c) => {
            FormatStyle::modified(c).map_err(|_| HarnessError::UnsupportedKvDelimiter(delimiter))
        }
    }
}

fn shuffle_seed(seed: u64, sample_id: &str) -> u64 {
    seed::derive_seed(
        "ctxnorm-shuffle/v1",
        &[&seed.to_le_bytes(), sample_id.as_bytes()],
    )
}

/// Documents of `sample` with the distractors shuffled (seeded Fisher-Yates)
/// and the gold document inserted at `position`.
pub fn arrange_documents(
    sample: &QaSample,
    position: usize,
    seed: u64,
) -> Result<Vec<&Document>, HarnessError> {
    let len = sample.documents.len();
    if position >= len {
        return Err(DatasetError::PositionOutOfRange { position, len }.into());
    }
    let mut docs: Vec<&Document> = sample.distractors().collect();
    docs.shuffle(&mut seed::rng(shuffle_seed(seed, &sample.id)));
    docs.insert(position, sample.gold_document());
    Ok(docs)
}

/// Key-value counterpart of [`arrange_documents`].
pub fn arrange_pairs(sample: &KvSample, position: usize, seed: u64) -> Result<KvSample, HarnessError> {
    let len = sample.pairs.len();
    if position >= len {
        return Err(DatasetError::PositionOutOfRange { position, len }.into());
    }
    let mut pairs: Vec<_> = sample
        .pairs
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != sample.gold_index)
        .map(|(_, p)| p.clone())
        .collect();
    pairs.shuffle(&mut seed::rng(shuffle_seed(seed, &sample.id)));
    pairs.insert(position, sample.gold().clone());
    Ok(KvSample {
        id: sample.id.clone(),
        pairs,
        gold_index: position,
    })
}

/// A prompt ready to send, with what is needed to grade the reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuiltPrompt {
    pub text: String,
    /// Byte range of the gold document or gold pair line.
    pub gold_bytes: Range<usize>,
    pub answer: String,
}

/// Where the gold item goes when building a prompt.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Placement {
    /// Keep the stored order.
    AsStored,
    /// Gold at `position`, distractors shuffled with `seed`.
    Permuted { position: usize, seed: u64 },
}

pub(crate) fn build_prompt(
    sample: &Sample,
    placement: Placement,
    format: &FormatConfig,
    opts: &RunOptions,
) -> Result<BuiltPrompt, HarnessError> {
    match sample {
        Sample::Qa(qa) => {
            let docs: Vec<&Document> = match placement {
                Placement::AsStored => qa.documents.iter().collect(),
                Placement::Permuted { position, seed } => arrange_documents(qa, position, seed)?,
            };
            let gold_slot = docs
                .iter()
                .position(|d| d.is_gold)
                .expect("validated sample has a gold document");
            let normalized: Vec<_> = docs
                .into_iter()
                .map(|d| normalize_document(d, format, opts.selection_seed))
                .collect();
            let assembled = assemble_prompt_with_spans(&qa.question, &normalized, &opts.template);
            Ok(BuiltPrompt {
                gold_bytes: assembled.doc_spans[gold_slot].clone(),
                text: assembled.text,
                answer: qa.gold_answers[0].clone(),
            })
        }
        Sample::Kv(kv) => {
            let arranged = match placement {
                Placement::AsStored => kv.clone(),
                Placement::Permuted { position, seed } => arrange_pairs(kv, position, seed)?,
            };
            let rendered = render_kv_pairs(&arranged, kv_style(format.delimiter)?)?;
            Ok(BuiltPrompt {
                text: rendered.text,
                gold_bytes: rendered.gold_line,
                answer: kv.gold().1.as_str().to_owned(),
            })
        }
    }
}

/// Token span of the gold bytes, from token counts of the two prefixes.
pub(crate) fn gold_probe<B: Backend + ?Sized>(
    backend: &B,
    prompt: &BuiltPrompt,
) -> Result<GoldProbe, BackendError> {
    let start = backend.tokenize_count(&prompt.text[..prompt.gold_bytes.start])?;
    let end = backend.tokenize_count(&prompt.text[..prompt.gold_bytes.end])?;
    Ok(GoldProbe {
        span: start..end,
        answer: prompt.answer.clone(),
    })
}

pub(crate) fn request<'a>(
    prompt_id: &'a str,
    prompt: &'a BuiltPrompt,
    format_tag: &'a str,
    max_tokens: u32,
    return_attention: bool,
    probe: Option<GoldProbe>,
) -> GenerateRequest<'a> {
    GenerateRequest {
        prompt_id,
        prompt: &prompt.text,
        format_tag,
        options: GenerateOptions {
            max_tokens,
            return_attention,
        },
        probe,
    }
}

/// Run `f` over `items` with up to `workers` threads, keeping input order.
pub(crate) fn map_parallel<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}
