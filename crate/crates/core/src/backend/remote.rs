//! HTTP client for an inference server exposing
//!
//! * `POST /v1/generate` `{prompt, max_tokens, temperature, return_attention}`
//!   -> `{text, token_count, attention?: {T, weights}}`
//! * `POST /v1/tokenize` `{text}` -> `{count}`
//! * `GET /v1/capabilities` -> `{attention_supported, attention_convention, max_prompt_tokens}`
//!
//! Head and layer aggregation of the attention vector is the server's job.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{Backend, BackendError, Capabilities, GenerateRequest, GenerationRecord};
use crate::attention::AttentionVector;

pub const ENV_ENDPOINT: &str = "CTXNORM_ENDPOINT";
pub const ENV_API_KEY: &str = "CTXNORM_API_KEY";
pub const ENV_TIMEOUT: &str = "CTXNORM_TIMEOUT_SECS";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout: Duration,
    /// Sent as `Authorization: Bearer <key>`.
    pub api_key: Option<String>,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            timeout: Duration::from_secs(120),
            api_key: None,
            max_retries: 3,
            initial_backoff: Duration::from_millis(200),
            max_backoff: Duration::from_secs(5),
        }
    }

    /// Reads `CTXNORM_ENDPOINT`, `CTXNORM_API_KEY` and `CTXNORM_TIMEOUT_SECS`.
    pub fn from_env() -> Result<Self, BackendError> {
        let url = std::env::var(ENV_ENDPOINT)
            .map_err(|_| BackendError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let mut config = Self::new(url);
        config.api_key = std::env::var(ENV_API_KEY).ok();
        if let Ok(secs) = std::env::var(ENV_TIMEOUT) {
            let secs: u64 = secs
                .parse()
                .map_err(|_| BackendError::Config(format!("{ENV_TIMEOUT}={secs} is not an integer")))?;
            config.timeout = Duration::from_secs(secs);
        }
        Ok(config)
    }
}

#[derive(Serialize)]
struct GenerateBody<'a> {
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    return_attention: bool,
}

#[derive(Deserialize)]
struct WireAttention {
    #[serde(rename = "T")]
    len: usize,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
struct GenerateReply {
    text: String,
    token_count: usize,
    #[serde(default)]
    attention: Option<WireAttention>,
}

#[derive(Serialize)]
struct TokenizeBody<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct TokenizeReply {
    count: usize,
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url, path)
    }

    /// Run `call`, retrying transport failures with exponential backoff.
    fn with_retries<T>(
        &self,
        mut call: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let mut delay = self.config.initial_backoff;
        let mut attempt = 0;
        loop {
            match call() {
                Err(e) if e.is_transient() && attempt < self.config.max_retries => {
                    attempt += 1;
                    thread::sleep(delay);
                    delay = (delay * 2).min(self.config.max_backoff);
                }
                other => return other,
            }
        }
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<R, BackendError> {
        self.with_retries(|| {
            let mut request = self.agent.post(self.url(path));
            if let Some(key) = &self.config.api_key {
                request = request.header("Authorization", format!("Bearer {key}"));
            }
            let response = request
                .send_json(body)
                .map_err(|e| BackendError::Transport(e.to_string()))?;
            read_reply(response)
        })
    }

    fn get<R: for<'de> Deserialize<'de>>(&self, path: &str) -> Result<R, BackendError> {
        self.with_retries(|| {
            let mut request = self.agent.get(self.url(path));
            if let Some(key) = &self.config.api_key {
                request = request.header("Authorization", format!("Bearer {key}"));
            }
            let response = request
                .call()
                .map_err(|e| BackendError::Transport(e.to_string()))?;
            read_reply(response)
        })
    }
}

fn read_reply<R: for<'de> Deserialize<'de>>(
    mut response: ureq::http::Response<ureq::Body>,
) -> Result<R, BackendError> {
    let status = response.status().as_u16();
    if !(200..300).contains(&status) {
        let body = response
            .body_mut()
            .read_to_string()
            .unwrap_or_default();
        return Err(BackendError::Http { status, body });
    }
    response
        .body_mut()
        .read_json()
        .map_err(|e| BackendError::Protocol(e.to_string()))
}

impl Backend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote:{}", self.config.base_url)
    }

    fn capabilities(&self) -> Result<Capabilities, BackendError> {
        self.get("/v1/capabilities")
    }

    fn generate(&self, request: &GenerateRequest<'_>) -> Result<GenerationRecord, BackendError> {
        if request.prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let reply: GenerateReply = self.post(
            "/v1/generate",
            &GenerateBody {
                prompt: request.prompt,
                max_tokens: request.options.max_tokens,
                temperature: 0.0,
                return_attention: request.options.return_attention,
            },
        )?;
        let attention = match (request.options.return_attention, reply.attention) {
            (true, None) => {
                return Err(BackendError::AttentionUnavailable(
                    request.prompt_id.to_owned(),
                ))
            }
            (true, Some(wire)) => {
                if wire.len != wire.weights.len() {
                    return Err(BackendError::Protocol(format!(
                        "attention T = {} but {} weights",
                        wire.len,
                        wire.weights.len()
                    )));
                }
                Some(
                    AttentionVector::new(request.prompt_id, request.format_tag, wire.weights)
                        .map_err(|e| BackendError::Protocol(e.to_string()))?,
                )
            }
            (false, _) => None,
        };
        Ok(GenerationRecord {
            text: reply.text,
            attention,
            token_count: reply.token_count,
        })
    }

    fn tokenize_count(&self, text: &str) -> Result<usize, BackendError> {
        let reply: TokenizeReply = self.post("/v1/tokenize", &TokenizeBody { text })?;
        Ok(reply.count)
    }
}
