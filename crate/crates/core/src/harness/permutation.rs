use serde::{Deserialize, Serialize};

use super::{
    build_prompt, gold_probe, map_parallel, report::EXPERIMENT_SCHEMA, request, FailurePolicy,
    HarnessError, PermutationPlan, Placement, RunOptions,
};
use crate::backend::Backend;
use crate::dataset::{Dataset, Sample};
use crate::metrics::{score_answer, score_kv_answer, MetricSummary, MetricsError, PositionAccuracy};
use crate::normalizer::FormatConfig;

/// Outcome of one `(sample, position, seed)` cell. The raw bits are the
/// source of truth; every metric is derived from them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub sample_id: String,
    pub position: usize,
    pub seed: u64,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub format: FormatConfig,
    pub backend_id: String,
    pub template_id: String,
    pub dataset: String,
    pub selection_seed: u64,
    pub plan: PermutationPlan,
    pub failure_policy: FailurePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedBreakdown {
    pub seed: u64,
    pub position_accuracy: PositionAccuracy,
    pub summary: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    pub config: ExperimentConfig,
    pub cells: Vec<Cell>,
    /// Accuracy per position pooled over samples and seeds.
    pub position_accuracy: PositionAccuracy,
    pub per_seed: Vec<SeedBreakdown>,
    /// Mean of the per-seed summaries.
    pub summary: MetricSummary,
    pub failures: usize,
}

impl ExperimentResult {
    /// Derive every metric from `cells`. Cells must cover the plan fully.
    pub fn from_cells(config: ExperimentConfig, mut cells: Vec<Cell>) -> Result<Self, HarnessError> {
        let positions = config.plan.positions.clone();
        let seeds = config.plan.seeds.clone();
        let pos_index = |p: usize| positions.iter().position(|&q| q == p);
        let seed_index = |s: u64| seeds.iter().position(|&q| q == s);
        cells.sort_by(|a, b| {
            (&a.sample_id, pos_index(a.position), seed_index(a.seed))
                .cmp(&(&b.sample_id, pos_index(b.position), seed_index(b.seed)))
        });

        let mut correct = vec![vec![0usize; positions.len()]; seeds.len()];
        let mut totals = vec![vec![0usize; positions.len()]; seeds.len()];
        for cell in &cells {
            let (Some(p), Some(s)) = (pos_index(cell.position), seed_index(cell.seed)) else {
                return Err(HarnessError::InvalidPlan(format!(
                    "cell {}/{}/{} is not in the plan",
                    cell.sample_id, cell.position, cell.seed
                )));
            };
            totals[s][p] += 1;
            correct[s][p] += usize::from(cell.correct);
        }
        let denominator = totals[0][0];
        if totals.iter().flatten().any(|&t| t != denominator) || denominator == 0 {
            return Err(MetricsError::BadDenominators.into());
        }

        let mut per_seed = Vec::with_capacity(seeds.len());
        for (s, &seed) in seeds.iter().enumerate() {
            let pa = PositionAccuracy::from_counts(positions.clone(), &correct[s], denominator)?;
            per_seed.push(SeedBreakdown {
                seed,
                summary: MetricSummary::of(&pa),
                position_accuracy: pa,
            });
        }
        let pooled: Vec<usize> = (0..positions.len())
            .map(|p| correct.iter().map(|row| row[p]).sum())
            .collect();
        let position_accuracy =
            PositionAccuracy::from_counts(positions, &pooled, denominator * seeds.len())?;
        let summaries: Vec<MetricSummary> = per_seed.iter().map(|s| s.summary).collect();
        let summary = MetricSummary::mean_of(&summaries).expect("plan has seeds");
        let failures = cells.iter().filter(|c| c.failed).count();
        Ok(Self {
            schema: EXPERIMENT_SCHEMA.into(),
            created_at: None,
            config,
            cells,
            position_accuracy,
            per_seed,
            summary,
            failures,
        })
    }

    /// Rebuild the derived metrics from the stored cells.
    pub fn recompute(&self) -> Result<Self, HarnessError> {
        let mut fresh = Self::from_cells(self.config.clone(), self.cells.clone())?;
        fresh.created_at = self.created_at.clone();
        Ok(fresh)
    }
}

pub(crate) fn cell_prompt_id(sample_id: &str, position: usize, seed: u64, tag: &str) -> String {
    format!("{sample_id}|pos={position}|seed={seed}|fmt={tag}")
}

fn grade(sample: &Sample, text: &str) -> bool {
    match sample {
        Sample::Qa(qa) => score_answer(text, &qa.gold_answers),
        Sample::Kv(kv) => score_kv_answer(text, kv.gold().1.as_str()),
    }
}

/// Place the gold item at every planned position for every seed, normalize
/// with `format`, query the backend and grade each reply.
pub fn run_permutation_experiment<B: Backend + ?Sized>(
    dataset: &Dataset,
    backend: &B,
    format: &FormatConfig,
    plan: &PermutationPlan,
    opts: &RunOptions,
) -> Result<ExperimentResult, HarnessError> {
    plan.validate()?;
    let samples: Vec<&Sample> = match &plan.sample_ids {
        None => dataset.samples.iter().collect(),
        Some(ids) => ids
            .iter()
            .map(|id| {
                dataset
                    .get(id)
                    .ok_or_else(|| HarnessError::InvalidPlan(format!("unknown sample {id:?}")))
            })
            .collect::<Result<_, _>>()?,
    };
    if samples.is_empty() {
        return Err(HarnessError::EmptyPlan("dataset has no samples"));
    }
    for s in &samples {
        if let Some(&p) = plan.positions.iter().find(|&&p| p >= s.slot_count()) {
            return Err(HarnessError::InvalidPlan(format!(
                "position {p} out of range for sample {:?} with {} slots",
                s.id(),
                s.slot_count()
            )));
        }
    }

    let tag = format.tag();
    let wants_probe = backend.wants_gold_probe();
    let jobs: Vec<(&Sample, usize, u64)> = samples
        .iter()
        .flat_map(|&s| {
            plan.positions
                .iter()
                .flat_map(move |&p| plan.seeds.iter().map(move |&seed| (s, p, seed)))
        })
        .collect();

    let run_cell = |&(sample, position, seed): &(&Sample, usize, u64)| -> Result<Cell, HarnessError> {
        let prompt_id = cell_prompt_id(sample.id(), position, seed, &tag);
        let prompt = build_prompt(sample, Placement::Permuted { position, seed }, format, opts)?;
        let outcome = (|| {
            let probe = if wants_probe {
                Some(gold_probe(backend, &prompt)?)
            } else {
                None
            };
            backend.generate(&request(&prompt_id, &prompt, &tag, opts.max_tokens, false, probe))
        })();
        let mut cell = Cell {
            sample_id: sample.id().to_owned(),
            position,
            seed,
            correct: false,
            failed: false,
            error: None,
            token_count: None,
        };
        match outcome {
            Ok(record) => {
                cell.correct = grade(sample, &record.text);
                cell.token_count = Some(record.token_count);
            }
            Err(source) => match opts.failure_policy {
                FailurePolicy::Strict => return Err(HarnessError::Backend { prompt_id, source }),
                FailurePolicy::Lenient => {
                    cell.failed = true;
                    cell.error = Some(source.to_string());
                }
            },
        }
        Ok(cell)
    };

    let cells = map_parallel(&jobs, opts.workers, run_cell)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let config = ExperimentConfig {
        format: *format,
        backend_id: backend.id(),
        template_id: match samples[0] {
            Sample::Qa(_) => opts.template.id.clone(),
            Sample::Kv(_) => "kv-extraction".into(),
        },
        dataset: dataset.label(),
        selection_seed: opts.selection_seed,
        plan: plan.clone(),
        failure_policy: opts.failure_policy,
    };
    ExperimentResult::from_cells(config, cells)
}
