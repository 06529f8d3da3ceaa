use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{
    note_network_operation, truncate_to, BackendKind, CompletionResponse, LanguageModel, LlmError,
    ModelConfig,
};

/// Non-streaming client for an Ollama-compatible `/api/generate` endpoint.
pub struct OllamaBackend {
    cfg: ModelConfig,
    agent: ureq::Agent,
    url: String,
}

#[derive(Deserialize)]
struct GenerateReply {
    response: String,
}

const RETRY_PAUSE: Duration = Duration::from_millis(250);

impl OllamaBackend {
    pub fn new(cfg: ModelConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(cfg.request_timeout.min(Duration::from_secs(10)))
            .timeout(cfg.request_timeout)
            .build();
        let url = format!("{}/api/generate", cfg.endpoint.trim_end_matches('/'));
        OllamaBackend { cfg, agent, url }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn send(&self, prompt: &str) -> Result<String, Failure> {
        note_network_operation();
        let body = json!({
            "model": self.cfg.model_name,
            "prompt": prompt,
            "stream": false,
            "options": { "temperature": self.cfg.temperature },
        });
        let reply = match self.agent.post(&self.url).send_json(body) {
            Ok(reply) => reply,
            Err(ureq::Error::Status(code, reply)) => {
                let detail = reply.into_string().unwrap_or_default();
                return Err(Failure::Transport(format!(
                    "HTTP {code}: {}",
                    detail.trim()
                )));
            }
            Err(e) => return Err(Failure::Transport(e.to_string())),
        };
        let text = reply
            .into_string()
            .map_err(|e| Failure::Transport(format!("reading body: {e}")))?;
        serde_json::from_str::<GenerateReply>(&text)
            .map(|r| r.response)
            .map_err(|e| Failure::Protocol(e.to_string()))
    }
}

enum Failure {
    Transport(String),
    Protocol(String),
}

impl LanguageModel for OllamaBackend {
    fn complete(&self, prompt: &str) -> Result<CompletionResponse, LlmError> {
        if prompt.is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let started = Instant::now();
        let tries = 1 + self.cfg.transport_retries;
        let mut last = String::new();
        for attempt in 1..=tries {
            match self.send(prompt) {
                Ok(text) => {
                    let (text, truncated) = truncate_to(text, self.cfg.max_response_bytes);
                    return Ok(CompletionResponse {
                        text,
                        latency_ms: u64::try_from(started.elapsed().as_millis())
                            .unwrap_or(u64::MAX),
                        backend: BackendKind::Live,
                        truncated,
                    });
                }
                Err(Failure::Protocol(msg)) => return Err(LlmError::Protocol(msg)),
                Err(Failure::Transport(msg)) => {
                    last = msg;
                    if attempt < tries {
                        std::thread::sleep(RETRY_PAUSE);
                    }
                }
            }
        }
        Err(LlmError::Transport {
            attempts: tries,
            message: last,
        })
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }
}
