use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{BackendKind, CompletionResponse, LanguageModel, LlmError};
use crate::corpus::sha256_hex;

/// Returned when no cassette entry matches; contains no code on purpose.
pub const FALLBACK_RESPONSE: &str = "I am not able to determine a fix for this program.";

/// One recorded exchange. Entries keyed by `prompt_sha256` match exactly
/// (after normalization); `prompt_contains` entries match any prompt that
/// contains the given text and are tried only when no hash matches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_contains: Option<String>,
    pub response_text: String,
}

fn volatile_patterns() -> &'static [(Regex, &'static str)] {
    static PATTERNS: OnceLock<Vec<(Regex, &'static str)>> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        vec![
            (Regex::new(r"==\d+==").unwrap(), "==PID=="),
            (
                Regex::new(r"\(BuildId: [0-9a-fA-F]+\)").unwrap(),
                "(BuildId: ID)",
            ),
            (Regex::new(r"0x[0-9a-fA-F]+").unwrap(), "0xADDR"),
        ]
    })
}

/// Masks run-to-run noise in sanitizer output (pids, addresses, build ids)
/// so a recorded prompt still matches when replayed.
pub fn normalize_prompt(prompt: &str) -> String {
    let mut text = prompt.replace("\r\n", "\n");
    for (re, with) in volatile_patterns() {
        text = re.replace_all(&text, *with).into_owned();
    }
    text
}

pub fn prompt_sha256(prompt: &str) -> String {
    sha256_hex(normalize_prompt(prompt).as_bytes())
}

pub struct MockBackend {
    entries: Vec<CassetteEntry>,
    latency: Duration,
    calls: AtomicU64,
}

impl MockBackend {
    pub fn new(entries: Vec<CassetteEntry>) -> Self {
        MockBackend {
            entries,
            latency: Duration::ZERO,
            calls: AtomicU64::new(0),
        }
    }

    pub fn from_cassette(path: &Path) -> io::Result<Self> {
        let bytes = fs::read(path)?;
        let entries: Vec<CassetteEntry> = serde_json::from_slice(&bytes)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        Ok(MockBackend::new(entries))
    }

    /// Simulated model latency, useful for concurrency tests.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn lookup(&self, prompt: &str) -> Option<&CassetteEntry> {
        let hash = prompt_sha256(prompt);
        self.entries
            .iter()
            .find(|e| e.prompt_sha256.as_deref() == Some(hash.as_str()))
            .or_else(|| {
                self.entries.iter().find(|e| {
                    e.prompt_sha256.is_none()
                        && e.prompt_contains
                            .as_deref()
                            .is_some_and(|needle| prompt.contains(needle))
                })
            })
    }
}

impl LanguageModel for MockBackend {
    fn complete(&self, prompt: &str) -> Result<CompletionResponse, LlmError> {
        if prompt.is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let started = Instant::now();
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let text = self
            .lookup(prompt)
            .map(|e| e.response_text.clone())
            .unwrap_or_else(|| FALLBACK_RESPONSE.to_string());
        Ok(CompletionResponse {
            text,
            latency_ms: u64::try_from(started.elapsed().as_millis()).unwrap_or(u64::MAX),
            backend: BackendKind::Mock,
            truncated: false,
        })
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }
}

/// Wraps a live backend and writes every exchange to a cassette file.
pub struct RecordingBackend<M> {
    inner: M,
    path: PathBuf,
    entries: Mutex<Vec<CassetteEntry>>,
}

impl<M: LanguageModel> RecordingBackend<M> {
    pub fn new(inner: M, path: impl Into<PathBuf>) -> Self {
        RecordingBackend {
            inner,
            path: path.into(),
            entries: Mutex::new(Vec::new()),
        }
    }
}

impl<M: LanguageModel> LanguageModel for RecordingBackend<M> {
    fn complete(&self, prompt: &str) -> Result<CompletionResponse, LlmError> {
        let reply = self.inner.complete(prompt)?;
        let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        entries.push(CassetteEntry {
            prompt_sha256: Some(prompt_sha256(prompt)),
            prompt_contains: None,
            response_text: reply.text.clone(),
        });
        // Rewritten whole each time so an interrupted campaign still leaves
        // a loadable cassette.
        if let Ok(json) = serde_json::to_vec_pretty(&*entries) {
            let tmp = self.path.with_extension("tmp");
            if fs::write(&tmp, json).is_ok() {
                let _ = fs::rename(&tmp, &self.path);
            }
        }
        Ok(reply)
    }

    fn kind(&self) -> BackendKind {
        self.inner.kind()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_masks_volatile_tokens() {
        let a = "==1234==ERROR: AddressSanitizer: stack-buffer-overflow on address 0x7ffd1 at pc 0x55aa\n    #0 0x4f in main (/w/prog+0x4f) (BuildId: abc123)";
        let b = "==99==ERROR: AddressSanitizer: stack-buffer-overflow on address 0x7ffe2 at pc 0x66bb\n    #0 0x4f in main (/w/prog+0x4f) (BuildId: def456)";
        assert_eq!(normalize_prompt(a), normalize_prompt(b));
        assert_eq!(prompt_sha256(a), prompt_sha256(b));
        assert_ne!(prompt_sha256("int a;"), prompt_sha256("int b;"));
    }

    #[test]
    fn hash_beats_substring_and_fallback_has_no_code() {
        let prompt = "fix MARKER please";
        let mock = MockBackend::new(vec![
            CassetteEntry {
                prompt_sha256: None,
                prompt_contains: Some("MARKER".into()),
                response_text: "by substring".into(),
            },
            CassetteEntry {
                prompt_sha256: Some(prompt_sha256(prompt)),
                prompt_contains: None,
                response_text: "by hash".into(),
            },
        ]);
        assert_eq!(mock.complete(prompt).unwrap().text, "by hash");
        assert_eq!(
            mock.complete("another MARKER").unwrap().text,
            "by substring"
        );
        let miss = mock.complete("nothing").unwrap().text;
        assert_eq!(miss, FALLBACK_RESPONSE);
        assert_eq!(crate::llm::extract_code(&miss), None);
        assert_eq!(mock.calls(), 3);
    }

    #[test]
    fn recording_writes_a_replayable_cassette() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cassette.json");
        let source = MockBackend::new(vec![CassetteEntry {
            prompt_sha256: None,
            prompt_contains: Some("x".into()),
            response_text: "recorded".into(),
        }]);
        let recorder = RecordingBackend::new(source, &path);
        recorder.complete("x ==42== 0xdead").unwrap();
        let replay = MockBackend::from_cassette(&path).unwrap();
        assert_eq!(replay.complete("x ==7== 0xbeef").unwrap().text, "recorded");
    }
}
