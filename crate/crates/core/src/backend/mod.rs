//! The model boundary.
//!
//! Every backend implements [`Backend`]: deterministic generation with
//! optional final-token attention, plus prompt token counting. Three
//! implementations ship here:
//!
//! * [`RemoteBackend`] speaks the `/v1/generate`, `/v1/tokenize` and
//!   `/v1/capabilities` HTTP contract.
//! * [`ReplayBackend`] serves records from a trace file written by
//!   [`RecordingBackend`].
//! * [`MockBackend`] is a positional-bias model with zone-shaped attention,
//!   used as a test oracle.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::AttentionVector;

mod mock;
mod remote;
mod replay;

pub use mock::{MockBackend, MockModelConfig, ZoneWeights, UNKNOWN_ANSWER};
pub use remote::{RemoteBackend, RemoteConfig};
pub use replay::{RecordingBackend, ReplayBackend, TraceEntry};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("backend did not return attention for prompt {0:?}")]
    AttentionUnavailable(String),
    #[error("backend does not support {0}")]
    Unsupported(&'static str),
    #[error("no recorded response for prompt {0:?}")]
    UnknownPrompt(String),
    #[error("recorded prompt {0:?} does not match the prompt being replayed")]
    PromptMismatch(String),
    #[error("prompt has {tokens} tokens, limit is {limit}")]
    PromptTooLong { tokens: usize, limit: usize },
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("gold span {start}..{end} outside prompt of {len} tokens")]
    InvalidSpan { start: usize, end: usize, len: usize },
    #[error("invalid backend config: {0}")]
    Config(String),
    #[error("trace i/o: {0}")]
    Trace(String),
}

impl BackendError {
    /// Only transport failures are worth retrying; generation is
    /// deterministic.
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateOptions {
    pub max_tokens: u32,
    pub return_attention: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            max_tokens: 64,
            return_attention: false,
        }
    }
}

/// Ground truth handed to simulated backends. Real models ignore it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldProbe {
    /// Token range of the gold item in the prompt.
    pub span: Range<usize>,
    pub answer: String,
}

#[derive(Debug, Clone)]
pub struct GenerateRequest<'a> {
    pub prompt_id: &'a str,
    pub prompt: &'a str,
    pub format_tag: &'a str,
    pub options: GenerateOptions,
    pub probe: Option<GoldProbe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub text: String,
    pub attention: Option<AttentionVector>,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub attention_supported: bool,
    /// Free-text description of which layer/heads the attention comes from
    /// and whether it is pre- or post-softmax.
    pub attention_convention: String,
    pub max_prompt_tokens: Option<usize>,
    #[serde(default = "default_true")]
    pub tokenize_supported: bool,
}

fn default_true() -> bool {
    true
}

pub trait Backend: Send + Sync {
    fn id(&self) -> String;

    fn capabilities(&self) -> Result<Capabilities, BackendError>;

    fn generate(&self, request: &GenerateRequest<'_>) -> Result<GenerationRecord, BackendError>;

    fn tokenize_count(&self, text: &str) -> Result<usize, BackendError>;

    /// Whether the harness should compute a [`GoldProbe`] for each request.
    fn wants_gold_probe(&self) -> bool {
        false
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn id(&self) -> String {
        (**self).id()
    }
    fn capabilities(&self) -> Result<Capabilities, BackendError> {
        (**self).capabilities()
    }
    fn generate(&self, request: &GenerateRequest<'_>) -> Result<GenerationRecord, BackendError> {
        (**self).generate(request)
    }
    fn tokenize_count(&self, text: &str) -> Result<usize, BackendError> {
        (**self).tokenize_count(text)
    }
    fn wants_gold_probe(&self) -> bool {
        (**self).wants_gold_probe()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn capabilities(&self) -> Result<Capabilities, BackendError> {
        (**self).capabilities()
    }
    fn generate(&self, request: &GenerateRequest<'_>) -> Result<GenerationRecord, BackendError> {
        (**self).generate(request)
    }
    fn tokenize_count(&self, text: &str) -> Result<usize, BackendError> {
        (**self).tokenize_count(text)
    }
    fn wants_gold_probe(&self) -> bool {
        (**self).wants_gold_probe()
    }
}
