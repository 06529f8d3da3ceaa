//! Local language-model access: a live Ollama-style backend, a cassette
//! replaying mock, and response-to-source extraction.

mod extract;
mod mock;
mod ollama;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use extract::extract_code;
pub use mock::{
    normalize_prompt, prompt_sha256, CassetteEntry, MockBackend, RecordingBackend,
    FALLBACK_RESPONSE,
};
pub use ollama::OllamaBackend;

pub const ENDPOINT_ENV: &str = "REFUZZ_MODEL_ENDPOINT";
pub const DEFAULT_ENDPOINT: &str = "http://127.0.0.1:11434";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub endpoint: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_response_bytes: usize,
    pub request_timeout: Duration,
    /// Extra tries after a transport failure. Independent of repair attempts.
    pub transport_retries: u32,
    pub max_in_flight: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            endpoint: DEFAULT_ENDPOINT.to_string(),
            model_name: "llama3.2".to_string(),
            temperature: 0.2,
            max_response_bytes: 256 * 1024,
            request_timeout: Duration::from_secs(120),
            transport_retries: 1,
            max_in_flight: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelConfigError {
    #[error("temperature must be a finite number >= 0")]
    Temperature,
    #[error("transport retries must be at most 2")]
    TooManyRetries,
    #[error("in-flight request cap must be at least 1")]
    ZeroInFlight,
    #[error("endpoint must be an http:// URL")]
    Endpoint,
}

impl ModelConfig {
    /// Defaults with the endpoint taken from the environment when set.
    pub fn from_env() -> Self {
        let mut cfg = ModelConfig::default();
        if let Ok(endpoint) = std::env::var(ENDPOINT_ENV) {
            if !endpoint.trim().is_empty() {
                cfg.endpoint = endpoint.trim().to_string();
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<(), ModelConfigError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(ModelConfigError::Temperature);
        }
        if self.transport_retries > 2 {
            return Err(ModelConfigError::TooManyRetries);
        }
        if self.max_in_flight == 0 {
            return Err(ModelConfigError::ZeroInFlight);
        }
        if !self.endpoint.starts_with("http://") && !self.endpoint.starts_with("https://") {
            return Err(ModelConfigError::Endpoint);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub latency_ms: u64,
    pub backend: BackendKind,
    /// The model's output exceeded the response cap and was cut.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed model response: {0}")]
    Protocol(String),
}

pub trait LanguageModel: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<CompletionResponse, LlmError>;
    fn kind(&self) -> BackendKind;
}

impl<M: LanguageModel + ?Sized> LanguageModel for Arc<M> {
    fn complete(&self, prompt: &str) -> Result<CompletionResponse, LlmError> {
        (**self).complete(prompt)
    }

    fn kind(&self) -> BackendKind {
        (**self).kind()
    }
}

static NETWORK_OPERATIONS: AtomicU64 = AtomicU64::new(0);

/// Requests sent over the network by any backend in this process.
pub fn network_operations() -> u64 {
    NETWORK_OPERATIONS.load(Ordering::SeqCst)
}

pub(crate) fn note_network_operation() {
    NETWORK_OPERATIONS.fetch_add(1, Ordering::SeqCst);
}

/// Cuts `text` to at most `cap` bytes on a char boundary.
pub(crate) fn truncate_to(mut text: String, cap: usize) -> (String, bool) {
    if text.len() <= cap {
        return (text, false);
    }
    let mut end = cap;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    text.truncate(end);
    (text, true)
}

#[derive(Debug, Default)]
struct Gate {
    in_flight: usize,
    peak: usize,
}

/// Shares one backend across workers while capping concurrent requests.
pub struct ModelClient {
    backend: Box<dyn LanguageModel>,
    limit: usize,
    gate: Mutex<Gate>,
    freed: Condvar,
}

struct Permit<'a>(&'a ModelClient);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut gate = self.0.gate.lock().unwrap_or_else(|e| e.into_inner());
        gate.in_flight -= 1;
        self.0.freed.notify_one();
    }
}

impl ModelClient {
    pub fn new(backend: impl LanguageModel + 'static, max_in_flight: usize) -> Self {
        ModelClient {
            backend: Box::new(backend),
            limit: max_in_flight.max(1),
            gate: Mutex::new(Gate::default()),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut gate = self.gate.lock().unwrap_or_else(|e| e.into_inner());
        while gate.in_flight >= self.limit {
            gate = self.freed.wait(gate).unwrap_or_else(|e| e.into_inner());
        }
        gate.in_flight += 1;
        gate.peak = gate.peak.max(gate.in_flight);
        Permit(self)
    }

    /// Highest number of simultaneous requests seen so far.
    pub fn peak_in_flight(&self) -> usize {
        self.gate.lock().unwrap_or_else(|e| e.into_inner()).peak
    }
}

impl LanguageModel for ModelClient {
    fn complete(&self, prompt: &str) -> Result<CompletionResponse, LlmError> {
        if prompt.is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let _permit = self.acquire();
        self.backend.complete(prompt)
    }

    fn kind(&self) -> BackendKind {
        self.backend.kind()
    }
}
