//! Deterministic positional-bias model.
//!
//! Tokens are whitespace-separated units; inside a unit, every character in
//! `splitting_delimiters` is a token of its own and each maximal run of other
//! characters is one token. So `"a-b"` is 1 token by default and 3 tokens
//! when `-` is splitting.
//!
//! Token `t` of `T` sits at normalized position `t / (T - 1)`. Its attention
//! weight is the profile's `start` weight below 0.2, `mid` weight below 0.8
//! and `end` weight from 0.8 on, normalized to sum to 1. The model answers
//! correctly iff the attention mass on the gold span reaches `threshold`;
//! otherwise it replies [`UNKNOWN_ANSWER`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, Capabilities, GenerateRequest, GenerationRecord};
use crate::attention::AttentionVector;

pub const UNKNOWN_ANSWER: &str = "UNKNOWN";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneWeights {
    pub start: f64,
    pub mid: f64,
    pub end: f64,
}

impl ZoneWeights {
    pub const UNIFORM: ZoneWeights = ZoneWeights::new(1.0, 1.0, 1.0);
    pub const U_SHAPED: ZoneWeights = ZoneWeights::new(1.0, 0.0, 1.0);

    pub const fn new(start: f64, mid: f64, end: f64) -> Self {
        Self { start, mid, end }
    }

    fn validate(&self) -> Result<(), String> {
        let all = [self.start, self.mid, self.end];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(format!("zone weights must be finite and >= 0: {self:?}"));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(format!("profile needs a positive zone weight: {self:?}"));
        }
        Ok(())
    }

    /// Weight of token `t` in a prompt of `len` tokens (`len >= 2`).
    pub fn weight_at(&self, t: usize, len: usize) -> f64 {
        let last = len - 1;
        if 5 * t < last {
            self.start
        } else if 5 * t < 4 * last {
            self.mid
        } else {
            self.end
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockModelConfig {
    /// Profile for format tags without an entry in `profiles`.
    pub default_profile: ZoneWeights,
    /// Format tag (delimiter label, `none` for unformatted) to profile.
    #[serde(default)]
    pub profiles: BTreeMap<String, ZoneWeights>,
    pub threshold: f64,
    #[serde(default)]
    pub splitting_delimiters: Vec<char>,
    #[serde(default)]
    pub max_prompt_tokens: Option<usize>,
}

impl Default for MockModelConfig {
    fn default() -> Self {
        Self {
            default_profile: ZoneWeights::UNIFORM,
            profiles: BTreeMap::new(),
            threshold: 0.05,
            splitting_delimiters: Vec::new(),
            max_prompt_tokens: None,
        }
    }
}

impl MockModelConfig {
    pub fn with_profile(mut self, tag: impl Into<String>, profile: ZoneWeights) -> Self {
        self.profiles.insert(tag.into(), profile);
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        self.default_profile.validate().map_err(BackendError::Config)?;
        for (tag, p) in &self.profiles {
            p.validate()
                .map_err(|e| BackendError::Config(format!("profile {tag:?}: {e}")))?;
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(BackendError::Config(format!(
                "threshold must lie in (0, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn profile(&self, tag: &str) -> ZoneWeights {
        self.profiles.get(tag).copied().unwrap_or(self.default_profile)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        let config: Self = serde_json::from_str(&raw)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    config: MockModelConfig,
}

impl MockBackend {
    pub fn new(config: MockModelConfig) -> Result<Self, BackendError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &MockModelConfig {
        &self.config
    }

    pub fn count_tokens(&self, text: &str) -> usize {
        let splits = &self.config.splitting_delimiters;
        text.split_whitespace()
            .map(|unit| {
                let mut count = 0;
                let mut in_run = false;
                for c in unit.chars() {
                    if splits.contains(&c) {
                        count += 1;
                        in_run = false;
                    } else if !in_run {
                        count += 1;
                        in_run = true;
                    }
                }
                count
            })
            .sum()
    }

    /// Normalized zone attention over a prompt of `len` tokens.
    pub fn attention_weights(&self, format_tag: &str, len: usize) -> Result<Vec<f64>, BackendError> {
        if len < 2 {
            return Err(BackendError::Config(format!(
                "prompt has {len} token(s); attention needs at least 2"
            )));
        }
        let profile = self.config.profile(format_tag);
        let raw: Vec<f64> = (0..len).map(|t| profile.weight_at(t, len)).collect();
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(BackendError::Config(format!(
                "profile for {format_tag:?} puts no weight on a {len}-token prompt"
            )));
        }
        Ok(raw.into_iter().map(|w| w / total).collect())
    }
}

impl Backend for MockBackend {
    fn id(&self) -> String {
        "mock".into()
    }

    fn capabilities(&self) -> Result<Capabilities, BackendError> {
        Ok(Capabilities {
            attention_supported: true,
            attention_convention: "zone-profile mock; normalized over all prompt tokens".into(),
            max_prompt_tokens: self.config.max_prompt_tokens,
            tokenize_supported: true,
        })
    }

    fn generate(&self, request: &GenerateRequest<'_>) -> Result<GenerationRecord, BackendError> {
        if request.prompt.trim().is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let len = self.count_tokens(request.prompt);
        if let Some(limit) = self.config.max_prompt_tokens {
            if len > limit {
                return Err(BackendError::PromptTooLong { tokens: len, limit });
            }
        }
        let weights = self.attention_weights(request.format_tag, len)?;
        let text = match &request.probe {
            Some(probe) => {
                let span = probe.span.clone();
                if span.start > span.end || span.end > len {
                    return Err(BackendError::InvalidSpan {
                        start: span.start,
                        end: span.end,
                        len,
                    });
                }
                let mass: f64 = weights[span].iter().sum();
                if mass >= self.config.threshold {
                    probe.answer.clone()
                } else {
                    UNKNOWN_ANSWER.to_owned()
                }
            }
            None => UNKNOWN_ANSWER.to_owned(),
        };
        let attention = if request.options.return_attention {
            Some(
                AttentionVector::new(request.prompt_id, request.format_tag, weights)
                    .map_err(|e| BackendError::Config(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(GenerationRecord {
            text,
            attention,
            token_count: len,
        })
    }

    fn tokenize_count(&self, text: &str) -> Result<usize, BackendError> {
        Ok(self.count_tokens(text))
    }

    fn wants_gold_probe(&self) -> bool {
        true
    }
}
