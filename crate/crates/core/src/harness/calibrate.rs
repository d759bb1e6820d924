use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    build_prompt, map_parallel, report::CALIBRATION_SCHEMA, report::PIPELINE_SCHEMA,
    report::SWEEP_SCHEMA, request, run_permutation_experiment, ExperimentResult, HarnessError,
    PermutationPlan, Placement, RunOptions,
};
use crate::attention::{attention_balance_score, select_format, AbsResult, FormatScores};
use crate::backend::{Backend, BackendError};
use crate::dataset::{Dataset, Sample};
use crate::normalizer::{Delimiter, FormatConfig};
use crate::seed;

/// Where calibration prompts come from.
#[derive(Debug, Clone, Copy)]
pub enum CalibrationMode<'a> {
    /// Draw from the dataset being evaluated.
    EvalSet,
    /// Draw from a separate dataset.
    HeldOut(&'a Dataset),
}

impl CalibrationMode<'_> {
    fn label(&self) -> &'static str {
        match self {
            CalibrationMode::EvalSet => "eval-set",
            CalibrationMode::HeldOut(_) => "held-out",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CalibrationOptions<'a> {
    pub sample_count: usize,
    /// Seed for drawing the calibration samples.
    pub seed: u64,
    pub mode: CalibrationMode<'a>,
}

impl Default for CalibrationOptions<'_> {
    fn default() -> Self {
        Self {
            sample_count: 8,
            seed: 0,
            mode: CalibrationMode::EvalSet,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub format: FormatConfig,
    pub mean_abs: f64,
    /// Balance score per calibration sample id.
    pub scores: BTreeMap<String, AbsResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    pub backend_id: String,
    pub mode: String,
    pub sample_count: usize,
    pub sample_ids: Vec<String>,
    pub candidates: Vec<CandidateSummary>,
    pub selected: FormatConfig,
}

fn draw_samples(
    pool: &Dataset,
    count: usize,
    seed: u64,
) -> Result<Vec<&Sample>, HarnessError> {
    if count == 0 {
        return Err(HarnessError::ZeroSamples);
    }
    if count > pool.len() {
        return Err(HarnessError::NotEnoughSamples {
            requested: count,
            available: pool.len(),
        });
    }
    let mut rng = seed::rng(seed::derive_seed("ctxnorm-calibrate/v1", &[&seed.to_le_bytes()]));
    let mut idx = rand::seq::index::sample(&mut rng, pool.len(), count).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| &pool.samples[i]).collect())
}

/// Score every candidate format by mean attention balance over `S` sampled
/// prompts and pick the best one.
pub fn calibrate<B: Backend + ?Sized>(
    dataset: &Dataset,
    backend: &B,
    candidates: &[FormatConfig],
    calib: &CalibrationOptions<'_>,
    opts: &RunOptions,
) -> Result<CalibrationReport, HarnessError> {
    if candidates.is_empty() {
        return Err(crate::normalizer::NormalizeError::EmptyCandidates.into());
    }
    let pool = match calib.mode {
        CalibrationMode::EvalSet => dataset,
        CalibrationMode::HeldOut(held_out) => held_out,
    };
    let samples = draw_samples(pool, calib.sample_count, calib.seed)?;
    let caps = backend.capabilities().map_err(|source| HarnessError::Backend {
        prompt_id: "capabilities".into(),
        source,
    })?;
    if !caps.attention_supported {
        return Err(HarnessError::AttentionUnsupported(backend.id()));
    }

    let jobs: Vec<(&FormatConfig, &Sample)> = candidates
        .iter()
        .flat_map(|c| samples.iter().map(move |&s| (c, s)))
        .collect();
    let score_one = |&(format, sample): &(&FormatConfig, &Sample)| -> Result<(String, AbsResult), HarnessError> {
        let tag = format.tag();
        let prompt_id = format!("calib|{}|fmt={tag}", sample.id());
        let prompt = build_prompt(sample, Placement::AsStored, format, opts)?;
        let record = backend
            .generate(&request(&prompt_id, &prompt, &tag, opts.max_tokens, true, None))
            .map_err(|source| HarnessError::Backend {
                prompt_id: prompt_id.clone(),
                source,
            })?;
        let attention = record.attention.ok_or_else(|| HarnessError::Backend {
            prompt_id: prompt_id.clone(),
            source: BackendError::AttentionUnavailable(prompt_id.clone()),
        })?;
        Ok((sample.id().to_owned(), attention_balance_score(&attention)?))
    };
    let scored = map_parallel(&jobs, opts.workers, score_one);

    let mut per_format: Vec<FormatScores> = candidates
        .iter()
        .map(|c| FormatScores {
            config: *c,
            scores: BTreeMap::new(),
        })
        .collect();
    for (i, result) in scored.into_iter().enumerate() {
        let (id, abs) = result?;
        per_format[i / samples.len()].scores.insert(id, abs);
    }
    let selection = select_format(&per_format)?;

    Ok(CalibrationReport {
        schema: CALIBRATION_SCHEMA.into(),
        created_at: None,
        backend_id: backend.id(),
        mode: calib.mode.label().into(),
        sample_count: samples.len(),
        sample_ids: samples.iter().map(|s| s.id().to_owned()).collect(),
        candidates: per_format
            .into_iter()
            .zip(selection.means)
            .map(|(f, (_, mean_abs))| CandidateSummary {
                format: f.config,
                mean_abs,
                scores: f.scores,
            })
            .collect(),
        selected: selection.selected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub sample_count: usize,
    pub selected: Delimiter,
    pub means: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    pub entries: Vec<SweepEntry>,
    /// True when every sample count selected the same delimiter.
    pub stable: bool,
}

/// Calibrate once per sample count and report how the choice moves.
pub fn sweep_sample_counts<B: Backend + ?Sized>(
    dataset: &Dataset,
    backend: &B,
    candidates: &[FormatConfig],
    sample_counts: &[usize],
    calib: &CalibrationOptions<'_>,
    opts: &RunOptions,
) -> Result<SweepReport, HarnessError> {
    let mut entries = Vec::with_capacity(sample_counts.len());
    for &sample_count in sample_counts {
        let report = calibrate(
            dataset,
            backend,
            candidates,
            &CalibrationOptions {
                sample_count,
                ..*calib
            },
            opts,
        )?;
        entries.push(SweepEntry {
            sample_count,
            selected: report.selected.delimiter,
            means: report
                .candidates
                .iter()
                .map(|c| (c.format.tag(), c.mean_abs))
                .collect(),
        });
    }
    let stable = entries.windows(2).all(|w| w[0].selected == w[1].selected);
    Ok(SweepReport {
        schema: SWEEP_SCHEMA.into(),
        created_at: None,
        entries,
        stable,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnormOutcome {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    pub calibration: CalibrationReport,
    /// Permutation run with the selected format.
    pub result: ExperimentResult,
    /// Permutation run without any rewriting.
    pub baseline: ExperimentResult,
}

impl CnormOutcome {
    pub fn oaa_gain(&self) -> f64 {
        self.result.summary.oaa - self.baseline.summary.oaa
    }

    pub fn opa_gain(&self) -> f64 {
        self.result.summary.opa - self.baseline.summary.opa
    }
}

/// Calibrate, then run the permutation experiment with the selected format
/// alongside an unformatted baseline.
pub fn run_cnorm_pipeline<B: Backend + ?Sized>(
    dataset: &Dataset,
    backend: &B,
    candidates: &[FormatConfig],
    calib: &CalibrationOptions<'_>,
    plan: &PermutationPlan,
    opts: &RunOptions,
) -> Result<CnormOutcome, HarnessError> {
    let calibration = calibrate(dataset, backend, candidates, calib, opts)?;
    let result = run_permutation_experiment(dataset, backend, &calibration.selected, plan, opts)?;
    let baseline = run_permutation_experiment(dataset, backend, &FormatConfig::none(), plan, opts)?;
    Ok(CnormOutcome {
        schema: PIPELINE_SCHEMA.into(),
        created_at: None,
        calibration,
        result,
        baseline,
    })
}
