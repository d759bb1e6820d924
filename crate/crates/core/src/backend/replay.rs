//! Trace recording and offline replay.
//!
//! A trace is JSON lines. Generation entries carry `prompt_id`,
//! `format_tag`, `T` and `weights` (when attention was returned), plus
//! `text`, `token_count` and the SHA-256 of the prompt. Tokenization entries
//! carry `kind: "tokenize"`, the SHA-256 of the text and the count. Lines
//! without a `kind` are generation entries, so plain attention traces load
//! too.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, Capabilities, GenerateRequest, GenerationRecord};
use crate::attention::AttentionVector;
use crate::seed::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TraceEntry {
    Generate {
        prompt_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prompt_hash: Option<String>,
        format_tag: String,
        #[serde(default)]
        text: String,
        #[serde(default)]
        token_count: usize,
        #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
        len: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
    Tokenize {
        text_hash: String,
        count: usize,
    },
}

impl TraceEntry {
    fn from_generation(request: &GenerateRequest<'_>, record: &GenerationRecord) -> Self {
        let weights = record.attention.as_ref().map(|a| a.weights.clone());
        TraceEntry::Generate {
            prompt_id: request.prompt_id.to_owned(),
            prompt_hash: Some(sha256_hex(request.prompt.as_bytes())),
            format_tag: request.format_tag.to_owned(),
            text: record.text.clone(),
            token_count: record.token_count,
            len: weights.as_ref().map(Vec::len),
            weights,
        }
    }
}

fn parse_entry(line: &str, line_no: usize) -> Result<TraceEntry, BackendError> {
    let mut value: serde_json::Value = serde_json::from_str(line)
        .map_err(|e| BackendError::Trace(format!("line {line_no}: {e}")))?;
    if let Some(obj) = value.as_object_mut() {
        obj.entry("kind").or_insert_with(|| "generate".into());
    }
    serde_json::from_value(value).map_err(|e| BackendError::Trace(format!("line {line_no}: {e}")))
}

#[derive(Debug, Clone)]
struct Recorded {
    prompt_hash: Option<String>,
    record: GenerationRecord,
}

/// Serves generation and tokenization results from a trace.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    source: String,
    generations: BTreeMap<String, Recorded>,
    token_counts: BTreeMap<String, usize>,
}

impl ReplayBackend {
    pub fn from_entries(
        source: impl Into<String>,
        entries: impl IntoIterator<Item = TraceEntry>,
    ) -> Result<Self, BackendError> {
        let mut generations = BTreeMap::new();
        let mut token_counts = BTreeMap::new();
        for entry in entries {
            match entry {
                TraceEntry::Generate {
                    prompt_id,
                    prompt_hash,
                    format_tag,
                    text,
                    token_count,
                    len,
                    weights,
                } => {
                    let attention = match weights {
                        Some(w) => {
                            if let Some(t) = len {
                                if t != w.len() {
                                    return Err(BackendError::Trace(format!(
                                        "{prompt_id}: T = {t} but {} weights",
                                        w.len()
                                    )));
                                }
                            }
                            Some(
                                AttentionVector::new(prompt_id.clone(), format_tag, w)
                                    .map_err(|e| BackendError::Trace(format!("{prompt_id}: {e}")))?,
                            )
                        }
                        None => None,
                    };
                    let token_count = if token_count == 0 {
                        len.unwrap_or(0)
                    } else {
                        token_count
                    };
                    let record = GenerationRecord {
                        text,
                        attention,
                        token_count,
                    };
                    generations.insert(
                        prompt_id,
                        Recorded {
                            prompt_hash,
                            record,
                        },
                    );
                }
                TraceEntry::Tokenize { text_hash, count } => {
                    token_counts.insert(text_hash, count);
                }
            }
        }
        Ok(Self {
            source: source.into(),
            generations,
            token_counts,
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let file = fs::File::open(path)
            .map_err(|e| BackendError::Trace(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| BackendError::Trace(e.to_string()))?;
            if !line.trim().is_empty() {
                entries.push(parse_entry(&line, i + 1)?);
            }
        }
        Self::from_entries(path.display().to_string(), entries)
    }

    pub fn len(&self) -> usize {
        self.generations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generations.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn id(&self) -> String {
        format!("replay:{}", self.source)
    }

    fn capabilities(&self) -> Result<Capabilities, BackendError> {
        Ok(Capabilities {
            attention_supported: self
                .generations
                .values()
                .any(|r| r.record.attention.is_some()),
            attention_convention: "as recorded".into(),
            max_prompt_tokens: None,
            tokenize_supported: !self.token_counts.is_empty(),
        })
    }

    fn generate(&self, request: &GenerateRequest<'_>) -> Result<GenerationRecord, BackendError> {
        let recorded = self
            .generations
            .get(request.prompt_id)
            .ok_or_else(|| BackendError::UnknownPrompt(request.prompt_id.to_owned()))?;
        if let Some(hash) = &recorded.prompt_hash {
            if *hash != sha256_hex(request.prompt.as_bytes()) {
                return Err(BackendError::PromptMismatch(request.prompt_id.to_owned()));
            }
        }
        if request.options.return_attention && recorded.record.attention.is_none() {
            return Err(BackendError::AttentionUnavailable(
                request.prompt_id.to_owned(),
            ));
        }
        Ok(recorded.record.clone())
    }

    fn tokenize_count(&self, text: &str) -> Result<usize, BackendError> {
        self.token_counts
            .get(&sha256_hex(text.as_bytes()))
            .copied()
            .ok_or(BackendError::Unsupported("tokenization of unrecorded text"))
    }
}

/// Wraps a backend and records every call for later replay.
pub struct RecordingBackend<B> {
    inner: B,
    generations: Mutex<BTreeMap<String, TraceEntry>>,
    token_counts: Mutex<BTreeMap<String, usize>>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            generations: Mutex::new(BTreeMap::new()),
            token_counts: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    /// Recorded entries, generation entries first, each group sorted by key.
    pub fn entries(&self) -> Vec<TraceEntry> {
        let mut out: Vec<TraceEntry> = self
            .generations
            .lock()
            .expect("trace lock poisoned")
            .values()
            .cloned()
            .collect();
        out.extend(
            self.token_counts
                .lock()
                .expect("trace lock poisoned")
                .iter()
                .map(|(h, &count)| TraceEntry::Tokenize {
                    text_hash: h.clone(),
                    count,
                }),
        );
        out
    }

    pub fn write_trace(&self, path: impl AsRef<Path>) -> Result<PathBuf, BackendError> {
        let path = path.as_ref();
        let io = |e: std::io::Error| BackendError::Trace(format!("{}: {e}", path.display()));
        let mut out = BufWriter::new(fs::File::create(path).map_err(io)?);
        for entry in self.entries() {
            let line = serde_json::to_string(&entry).expect("trace entries serialize");
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)?;
        Ok(path.to_path_buf())
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn capabilities(&self) -> Result<Capabilities, BackendError> {
        self.inner.capabilities()
    }

    fn generate(&self, request: &GenerateRequest<'_>) -> Result<GenerationRecord, BackendError> {
        let record = self.inner.generate(request)?;
        self.generations
            .lock()
            .expect("trace lock poisoned")
            .insert(
                request.prompt_id.to_owned(),
                TraceEntry::from_generation(request, &record),
            );
        Ok(record)
    }

    fn tokenize_count(&self, text: &str) -> Result<usize, BackendError> {
        let count = self.inner.tokenize_count(text)?;
        self.token_counts
            .lock()
            .expect("trace lock poisoned")
            .insert(sha256_hex(text.as_bytes()), count);
        Ok(count)
    }

    fn wants_gold_probe(&self) -> bool {
        self.inner.wants_gold_probe()
    }
}
