//! Run settings shared by the experiment commands. Every field can come from
//! a flag or from a TOML file passed with `--config`; flags win.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use clap::{Args, ValueEnum};
use ctxnorm_core::{
    candidate_formats, generate_kv_dataset, load_qa_dataset, Backend, Dataset, Delimiter,
    FailurePolicy, FormatConfig, KvGenConfig, MockBackend, MockModelConfig, PermutationPlan,
    PromptTemplate, RecordingBackend, RemoteBackend, RemoteConfig, ReplayBackend, RunOptions,
    DEFAULT_DELIMITERS,
};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Replay,
    Remote,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    /// TOML file with defaults for any of these flags.
    #[arg(long, value_name = "PATH")]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    #[arg(long, value_enum, env = "CTXNORM_BACKEND")]
    pub backend: Option<BackendKind>,
    /// JSON mock model config (profiles, threshold, splitting delimiters).
    #[arg(long, value_name = "PATH")]
    pub mock_config: Option<PathBuf>,
    /// Trace file served by the replay backend.
    #[arg(long, value_name = "PATH")]
    pub trace: Option<PathBuf>,
    #[arg(long, env = "CTXNORM_ENDPOINT")]
    pub endpoint: Option<String>,
    #[arg(long, env = "CTXNORM_API_KEY", hide_env_values = true)]
    pub api_key: Option<String>,
    #[arg(long, env = "CTXNORM_TIMEOUT_SECS")]
    pub timeout_secs: Option<u64>,
    /// Record every backend call to this trace file for later replay.
    #[arg(long, value_name = "PATH")]
    pub record_trace: Option<PathBuf>,

    /// JSON-lines dataset (QA or key-value records).
    #[arg(long, value_name = "PATH")]
    pub dataset: Option<PathBuf>,
    /// Generate a key-value dataset instead: pairs per sample.
    #[arg(long)]
    pub kv_pairs: Option<usize>,
    #[arg(long)]
    pub kv_chars: Option<usize>,
    #[arg(long)]
    pub kv_n: Option<usize>,
    #[arg(long)]
    pub kv_seed: Option<u64>,

    /// Candidate delimiters, comma separated (`none` for no rewriting).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub candidates: Option<Vec<String>>,
    /// Delimiter for `run-perm`.
    #[arg(long, allow_hyphen_values = true)]
    pub delimiter: Option<String>,
    /// Fraction of sentences rewritten per document.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Calibration prompts S.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub calib_seed: Option<u64>,
    /// Draw calibration prompts from this dataset instead of the evaluated one.
    #[arg(long, value_name = "PATH")]
    pub held_out: Option<PathBuf>,

    /// Gold positions to test (default: every slot).
    #[arg(long, value_delimiter = ',')]
    pub positions: Option<Vec<usize>>,
    /// Distractor shuffle seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// `base`, `aligned` or a template file with `{question}` and `{documents}`.
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long)]
    pub selection_seed: Option<u64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Abort on the first backend failure instead of scoring it incorrect.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(deserialize_with = "some_bool")]
    pub strict: Option<bool>,

    #[arg(short, long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Overwrite an existing output file.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(deserialize_with = "some_bool")]
    pub force: Option<bool>,
}

fn some_bool<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<bool>, D::Error> {
    bool::deserialize(d).map(Some)
}

macro_rules! fill {
    ($into:ident, $from:ident; $($field:ident),* $(,)?) => {
        $( if $into.$field.is_none() { $into.$field = $from.$field; } )*
    };
}

impl Settings {
    /// Fill unset fields from the `--config` file, if any.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let raw = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let file: Settings = toml::from_str(&raw)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        fill!(self, file;
            backend, mock_config, trace, endpoint, api_key, timeout_secs, record_trace,
            dataset, kv_pairs, kv_chars, kv_n, kv_seed, candidates, delimiter, ratio, samples,
            calib_seed, held_out, positions, seeds, template, selection_seed, max_tokens,
            workers, strict, out, force,
        );
        Ok(self)
    }

    pub fn force(&self) -> bool {
        self.force.unwrap_or(false)
    }

    pub fn out(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("--out is required".into()))
    }

    pub fn ratio(&self) -> f64 {
        self.ratio.unwrap_or(0.5)
    }

    pub fn samples(&self) -> usize {
        self.samples.unwrap_or(8)
    }

    pub fn dataset(&self) -> Result<Dataset, CliError> {
        let kv = [self.kv_pairs, self.kv_chars, self.kv_n].iter().any(Option::is_some)
            || self.kv_seed.is_some();
        match (&self.dataset, kv) {
            (Some(_), true) => Err(CliError::Usage(
                "give either --dataset or the --kv-* generation flags, not both".into(),
            )),
            (None, false) => Err(CliError::Usage(
                "no dataset: pass --dataset or --kv-pairs/--kv-chars/--kv-n/--kv-seed".into(),
            )),
            (Some(path), false) => load_qa_dataset(path)
                .with_context(|| format!("loading {}", path.display()))
                .map_err(CliError::Runtime),
            (None, true) => {
                let (Some(num_pairs), Some(char_len), Some(num_samples), Some(seed)) =
                    (self.kv_pairs, self.kv_chars, self.kv_n, self.kv_seed)
                else {
                    return Err(CliError::Usage(
                        "--kv-pairs, --kv-chars, --kv-n and --kv-seed go together".into(),
                    ));
                };
                generate_kv_dataset(&KvGenConfig {
                    num_pairs,
                    char_len,
                    num_samples,
                    seed,
                })
                .map_err(|e| CliError::Usage(e.to_string()))
            }
        }
    }

    pub fn held_out(&self) -> Result<Option<Dataset>, CliError> {
        self.held_out
            .as_ref()
            .map(|p| {
                load_qa_dataset(p)
                    .with_context(|| format!("loading {}", p.display()))
                    .map_err(CliError::Runtime)
            })
            .transpose()
    }

    fn parse_delimiter(s: &str) -> Result<Delimiter, CliError> {
        s.parse()
            .map_err(|e| CliError::Usage(format!("delimiter {s:?}: {e}")))
    }

    pub fn delimiters(&self) -> Result<Vec<Delimiter>, CliError> {
        match &self.candidates {
            None => Ok(DEFAULT_DELIMITERS.to_vec()),
            Some(list) => list.iter().map(|s| Self::parse_delimiter(s)).collect(),
        }
    }

    pub fn candidates(&self) -> Result<Vec<FormatConfig>, CliError> {
        candidate_formats(&self.delimiters()?, self.ratio()).map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn format(&self) -> Result<FormatConfig, CliError> {
        let delimiter = match &self.delimiter {
            None => Delimiter::None,
            Some(s) => Self::parse_delimiter(s)?,
        };
        FormatConfig::new(delimiter, self.ratio()).map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn plan(&self, dataset: &Dataset) -> PermutationPlan {
        let slots = dataset.samples.first().map_or(0, |s| s.slot_count());
        PermutationPlan {
            positions: self
                .positions
                .clone()
                .unwrap_or_else(|| (0..slots).collect()),
            seeds: self.seeds.clone().unwrap_or_else(|| vec![0, 1, 2]),
            sample_ids: None,
        }
    }

    pub fn run_options(&self) -> Result<RunOptions, CliError> {
        let template = match self.template.as_deref() {
            None | Some("base") => PromptTemplate::base(),
            Some("aligned") => PromptTemplate::aligned(),
            Some(path) => PromptTemplate::from_file(path).map_err(|e| CliError::Usage(e.to_string()))?,
        };
        let defaults = RunOptions::default();
        Ok(RunOptions {
            template,
            selection_seed: self.selection_seed.unwrap_or(defaults.selection_seed),
            max_tokens: self.max_tokens.unwrap_or(defaults.max_tokens),
            failure_policy: if self.strict.unwrap_or(false) {
                FailurePolicy::Strict
            } else {
                FailurePolicy::Lenient
            },
            workers: self.workers.unwrap_or(defaults.workers),
        })
    }

    pub fn backend(&self) -> Result<LiveBackend, CliError> {
        let kind = self
            .backend
            .ok_or_else(|| CliError::Usage("--backend is required (mock, replay or remote)".into()))?;
        let inner: Box<dyn Backend> = match kind {
            BackendKind::Mock => {
                let config = match &self.mock_config {
                    Some(path) => MockModelConfig::from_file(path).map_err(|e| CliError::Usage(e.to_string()))?,
                    None => MockModelConfig::default(),
                };
                Box::new(MockBackend::new(config).map_err(|e| CliError::Usage(e.to_string()))?)
            }
            BackendKind::Replay => {
                let path = self
                    .trace
                    .as_ref()
                    .ok_or_else(|| CliError::Usage("--trace is required for the replay backend".into()))?;
                Box::new(ReplayBackend::from_file(path).map_err(|e| CliError::Runtime(e.into()))?)
            }
            BackendKind::Remote => {
                let endpoint = self.endpoint.as_ref().ok_or_else(|| {
                    CliError::Usage("--endpoint or CTXNORM_ENDPOINT is required for the remote backend".into())
                })?;
                let mut config = RemoteConfig::new(endpoint.as_str());
                config.api_key = self.api_key.clone();
                if let Some(secs) = self.timeout_secs {
                    config.timeout = Duration::from_secs(secs);
                }
                Box::new(RemoteBackend::new(config))
            }
        };
        Ok(match &self.record_trace {
            None => LiveBackend::Plain(inner),
            Some(path) => LiveBackend::Recording(RecordingBackend::new(inner), path.clone()),
        })
    }
}

pub enum LiveBackend {
    Plain(Box<dyn Backend>),
    Recording(RecordingBackend<Box<dyn Backend>>, PathBuf),
}

impl LiveBackend {
    pub fn get(&self) -> &dyn Backend {
        match self {
            LiveBackend::Plain(b) => b.as_ref(),
            LiveBackend::Recording(b, _) => b,
        }
    }

    /// Write the recorded trace, if recording.
    pub fn finish(&self) -> anyhow::Result<()> {
        if let LiveBackend::Recording(b, path) = self {
            b.write_trace(path)
                .with_context(|| format!("writing trace {}", path.display()))?;
            eprintln!("trace written to {}", path.display());
        }
        Ok(())
    }
}
