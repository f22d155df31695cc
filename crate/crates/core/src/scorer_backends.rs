//! Concrete scorers: an HTTP client for OpenAI-compatible completion
//! endpoints (first-token probability of a target token, and binary
//! correctness of a short generation) plus the transport seam that lets every
//! endpoint test run offline from recorded fixtures.
//!
//! Request bodies are constructed deterministically: identical (config,
//! prompt) pairs serialize to byte-identical JSON, which is what makes
//! record/replay matching exact. The API credential is read from the
//! environment variable named in the config at request time; it is never
//! stored in config structs, fixtures, or error messages.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::{ScoreKind, ScoreOutcome, ScoreRequest, Scorer, ScoringError};

#[derive(Debug, Error)]
pub enum EndpointError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body_prefix}")]
    HttpStatus { status: u16, body_prefix: String },
    #[error("token not in top-k: target `{token}` absent from returned candidates")]
    TokenNotInTopK { token: String },
    #[error("malformed endpoint response: {0}")]
    Malformed(String),
    #[error("request failed after {attempts} attempts")]
    RetriesExhausted {
        attempts: u32,
        #[source]
        last: Box<EndpointError>,
    },
    #[error("replay fixture exhausted: no entry left for this request")]
    ReplayExhausted,
    #[error("replay fixture mismatch: {0}")]
    ReplayMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<EndpointError> for ScoringError {
    fn from(err: EndpointError) -> Self {
        ScoringError::Backend(Box::new(err))
    }
}

fn default_top_logprobs() -> u32 {
    20
}

fn default_timeout_secs() -> u64 {
    30
}

fn default_max_retries() -> u32 {
    3
}

fn default_retry_backoff_ms() -> u64 {
    250
}

/// Connection and scoring parameters for one endpoint. Holds the *name* of
/// the credential variable, never the credential.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    pub api_key_env: String,
    /// Verbatim token whose probability is scored. Providers that tokenize
    /// digits with a leading space need e.g. `" 5"` here.
    pub target_token: String,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_retry_backoff_ms")]
    pub retry_backoff_ms: u64,
}

impl EndpointConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    pub fn completions_url(&self) -> String {
        format!("{}/v1/completions", self.base_url.trim_end_matches('/'))
    }
}

/// Single-token probability request. Field names and order are the wire
/// contract; `temperature` and `max_tokens` are integers so the serialized
/// body reads `0` and `1` byte-for-byte.
#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: u32,
    logprobs: u32,
}

#[derive(Serialize)]
struct GenerationRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: u32,
}

/// The canonical probability-request body for (config, prompt).
pub fn completion_request_body(config: &EndpointConfig, prompt: &str) -> String {
    serde_json::to_string(&CompletionRequest {
        model: &config.model_name,
        prompt,
        max_tokens: 1,
        temperature: 0,
        logprobs: config.top_logprobs,
    })
    .expect("request body serialization cannot fail")
}

/// The canonical short-generation body for (config, prompt).
pub fn generation_request_body(config: &EndpointConfig, prompt: &str) -> String {
    serde_json::to_string(&GenerationRequest {
        model: &config.model_name,
        prompt,
        max_tokens: 16,
        temperature: 0,
    })
    .expect("request body serialization cannot fail")
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Debug, Deserialize)]
struct CompletionChoice {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Debug, Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    top_logprobs: Option<Vec<std::collections::HashMap<String, f64>>>,
}

#[derive(Debug, Clone)]
pub struct TransportResponse {
    pub status: u16,
    pub body: String,
}

/// The seam between the endpoint client and the network. `bearer` carries
/// the transient credential; implementations must not persist it.
pub trait Transport: Send + Sync {
    fn post(
        &self,
        url: &str,
        body: &str,
        bearer: Option<&str>,
    ) -> Result<TransportResponse, EndpointError>;
}

/// Live HTTP transport over a pooled blocking client.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self, EndpointError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        Ok(HttpTransport { client })
    }
}

impl Transport for HttpTransport {
    fn post(
        &self,
        url: &str,
        body: &str,
        bearer: Option<&str>,
    ) -> Result<TransportResponse, EndpointError> {
        let mut request = self
            .client
            .post(url)
            .header("Content-Type", "application/json")
            .body(body.to_string());
        if let Some(token) = bearer {
            request = request.bearer_auth(token);
        }
        let response = request
            .send()
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .text()
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        Ok(TransportResponse { status, body })
    }
}

/// One recorded exchange. The request body is stored verbatim so replay
/// matching is byte-exact. Credentials are never part of an entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub url: String,
    pub request: String,
    pub status: u16,
    pub response: String,
}

/// Serves recorded exchanges first-in-first-out, so a fixture can script a
/// retry sequence (e.g. a 500 followed by a 200 for the same body).
pub struct ReplayTransport {
    entries: Mutex<VecDeque<ReplayEntry>>,
}

impl ReplayTransport {
    pub fn new(entries: Vec<ReplayEntry>) -> Self {
        ReplayTransport {
            entries: Mutex::new(entries.into()),
        }
    }

    /// Load a JSONL fixture file, one entry per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EndpointError> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReplayEntry = serde_json::from_str(&line).map_err(|e| {
                EndpointError::Malformed(format!("fixture line {}: {e}", i + 1))
            })?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    /// Entries not yet consumed.
    pub fn remaining(&self) -> usize {
        self.entries.lock().unwrap().len()
    }
}

impl Transport for ReplayTransport {
    fn post(
        &self,
        url: &str,
        body: &str,
        _bearer: Option<&str>,
    ) -> Result<TransportResponse, EndpointError> {
        let mut entries = self.entries.lock().unwrap();
        let entry = entries.pop_front().ok_or(EndpointError::ReplayExhausted)?;
        if entry.url != url {
            return Err(EndpointError::ReplayMismatch(format!(
                "expected url `{}`, got `{url}`",
                entry.url
            )));
        }
        if entry.request != body {
            return Err(EndpointError::ReplayMismatch(format!(
                "request body differs from recording for url `{url}`"
            )));
        }
        Ok(TransportResponse {
            status: entry.status,
            body: entry.response,
        })
    }
}

/// Wraps another transport and appends every exchange to a JSONL fixture.
pub struct RecordingTransport<T: Transport> {
    inner: T,
    sink: Mutex<std::fs::File>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn create(inner: T, path: impl AsRef<Path>) -> Result<Self, EndpointError> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(RecordingTransport {
            inner,
            sink: Mutex::new(file),
        })
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn post(
        &self,
        url: &str,
        body: &str,
        bearer: Option<&str>,
    ) -> Result<TransportResponse, EndpointError> {
        let response = self.inner.post(url, body, bearer)?;
        let entry = ReplayEntry {
            url: url.to_string(),
            request: body.to_string(),
            status: response.status,
            response: response.body.clone(),
        };
        let mut sink = self.sink.lock().unwrap();
        let line = serde_json::to_string(&entry)
            .map_err(|e| EndpointError::Malformed(e.to_string()))?;
        writeln!(sink, "{line}")?;
        sink.flush()?;
        Ok(response)
    }
}

/// Result of a probability request. `token_missing` is set only in
/// permissive mode, when the target token was absent and 0.0 was substituted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstTokenProbability {
    pub probability: f64,
    pub token_missing: bool,
}

/// Client for one endpoint over any transport. Retries transport failures
/// and 429/5xx statuses up to `max_retries` extra attempts; other statuses
/// and malformed bodies fail immediately.
pub struct EndpointClient<T: Transport> {
    config: EndpointConfig,
    transport: T,
    permissive: bool,
}

impl<T: Transport> EndpointClient<T> {
    pub fn new(config: EndpointConfig, transport: T) -> Self {
        EndpointClient {
            config,
            transport,
            permissive: false,
        }
    }

    /// In permissive mode a target token absent from the top-k yields
    /// probability 0.0 (flagged on the result) instead of an error.
    pub fn permissive(mut self, yes: bool) -> Self {
        self.permissive = yes;
        self
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn bearer(&self) -> Option<String> {
        std::env::var(&self.config.api_key_env).ok()
    }

    fn post_with_retries(&self, url: &str, body: &str) -> Result<TransportResponse, EndpointError> {
        let bearer = self.bearer();
        let attempts = self.config.max_retries + 1;
        let mut last: Option<EndpointError> = None;
        for attempt in 0..attempts {
            if attempt > 0 && self.config.retry_backoff_ms > 0 {
                std::thread::sleep(Duration::from_millis(
                    self.config.retry_backoff_ms * u64::from(attempt),
                ));
            }
            match self.transport.post(url, body, bearer.as_deref()) {
                Ok(response) if response.status / 100 == 2 => return Ok(response),
                Ok(response) => {
                    let retryable =
                        response.status == 429 || (500..600).contains(&response.status);
                    let err = EndpointError::HttpStatus {
                        status: response.status,
                        body_prefix: response.body.chars().take(200).collect(),
                    };
                    if !retryable {
                        return Err(err);
                    }
                    last = Some(err);
                }
                Err(err @ EndpointError::Transport(_)) => last = Some(err),
                Err(err) => return Err(err),
            }
        }
        Err(EndpointError::RetriesExhausted {
            attempts,
            last: Box::new(last.expect("at least one attempt recorded")),
        })
    }

    fn parse_response(body: &str) -> Result<CompletionResponse, EndpointError> {
        serde_json::from_str(body).map_err(|e| EndpointError::Malformed(e.to_string()))
    }

    /// Probability the endpoint assigns to `target_token` as the single next
    /// token after `prompt_text`, read from the top-k logprob table.
    pub fn first_token_probability(
        &self,
        prompt_text: &str,
    ) -> Result<FirstTokenProbability, EndpointError> {
        let body = completion_request_body(&self.config, prompt_text);
        let response = self.post_with_retries(&self.config.completions_url(), &body)?;
        let parsed = Self::parse_response(&response.body)?;
        let choice = parsed
            .choices
            .first()
            .ok_or_else(|| EndpointError::Malformed("choices is empty".into()))?;
        let table = choice
            .logprobs
            .as_ref()
            .and_then(|lp| lp.top_logprobs.as_ref())
            .and_then(|tables| tables.first())
            .ok_or_else(|| {
                EndpointError::Malformed("choices[0].logprobs.top_logprobs[0] missing".into())
            })?;
        match table.get(&self.config.target_token) {
            Some(&logprob) => Ok(FirstTokenProbability {
                // A (numerically) positive logprob is clamped to probability 1.
                probability: logprob.min(0.0).exp(),
                token_missing: false,
            }),
            None if self.permissive => Ok(FirstTokenProbability {
                probability: 0.0,
                token_missing: true,
            }),
            None => Err(EndpointError::TokenNotInTopK {
                token: self.config.target_token.clone(),
            }),
        }
    }

    /// 1 iff a short greedy generation, after leading-whitespace trim,
    /// begins with `expected`. No semantic matching.
    pub fn binary_correctness(
        &self,
        prompt_text: &str,
        expected: &str,
    ) -> Result<u8, EndpointError> {
        let body = generation_request_body(&self.config, prompt_text);
        let response = self.post_with_retries(&self.config.completions_url(), &body)?;
        let parsed = Self::parse_response(&response.body)?;
        let text = parsed
            .choices
            .first()
            .and_then(|c| c.text.as_deref())
            .ok_or_else(|| EndpointError::Malformed("choices[0].text missing".into()))?;
        Ok(u8::from(text.trim_start().starts_with(expected)))
    }
}

/// Continuous scorer: raw = first-token probability of the target token.
pub struct EndpointScorer<T: Transport> {
    client: EndpointClient<T>,
    id: String,
}

impl<T: Transport> EndpointScorer<T> {
    pub fn new(client: EndpointClient<T>) -> Self {
        let id = format!("endpoint:{}", client.config().model_name);
        EndpointScorer { client, id }
    }

    pub fn with_id(mut self, id: &str) -> Self {
        self.id = id.to_string();
        self
    }
}

impl<T: Transport> Scorer for EndpointScorer<T> {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> ScoreKind {
        ScoreKind::Continuous
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreOutcome, ScoringError> {
        let result = self.client.first_token_probability(request.rendered)?;
        if result.token_missing {
            eprintln!(
                "warning: target token missing from top-k for subprompt `{}` repeat {}; scored 0.0",
                request.subprompt_key, request.repeat
            );
        }
        Ok(ScoreOutcome {
            raw: result.probability,
            binary: None,
        })
    }
}

/// Binary scorer: outcome 1 iff the generation starts with the target token.
/// `raw` mirrors the outcome so both fit targets stay usable.
pub struct BinaryEndpointScorer<T: Transport> {
    client: EndpointClient<T>,
    id: String,
}

impl<T: Transport> BinaryEndpointScorer<T> {
    pub fn new(client: EndpointClient<T>) -> Self {
        let id = format!("endpoint-binary:{}", client.config().model_name);
        BinaryEndpointScorer { client, id }
    }

    pub fn with_id(mut self, id: &str) -> Self {
        self.id = id.to_string();
        self
    }
}

impl<T: Transport> Scorer for BinaryEndpointScorer<T> {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> ScoreKind {
        ScoreKind::Binary
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreOutcome, ScoringError> {
        let expected = self.client.config().target_token.clone();
        let outcome = self.client.binary_correctness(request.rendered, &expected)?;
        Ok(ScoreOutcome {
            raw: f64::from(outcome),
            binary: Some(outcome),
        })
    }
}
