//! Structured views over compiler stderr and sanitizer runtime reports.
//!
//! Both parsers are total: any input yields a well-formed [`ErrorLog`].
//! Lines that do not match a known shape stay in `verbatim` only, which is
//! what gets pasted into repair prompts.

mod compiler;
mod sanitizer;

use serde::{Deserialize, Serialize};

pub use compiler::{parse_compiler_log, parse_compiler_log_capped};
pub use sanitizer::{parse_sanitizer_log, parse_sanitizer_log_capped};

/// Default cap on captured log text (64 KiB).
pub const DEFAULT_LOG_CAP: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticSource {
    Compiler,
    Asan,
    Ubsan,
    Msan,
    Tsan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
    Fatal,
    RuntimeError,
}

impl Severity {
    /// Warnings are context for the model; everything else makes a program
    /// invalid.
    pub fn triggers_repair(self) -> bool {
        !matches!(self, Severity::Warning)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackFrame {
    pub index: u32,
    pub pc: Option<String>,
    pub symbol: Option<String>,
    pub location: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub source: DiagnosticSource,
    pub severity: Severity,
    pub kind: String,
    pub message: String,
    pub file: Option<String>,
    pub line: Option<u32>,
    pub column: Option<u32>,
    #[serde(default)]
    pub frames: Vec<StackFrame>,
    pub raw_excerpt: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorLog {
    pub verbatim: String,
    pub diagnostics: Vec<Diagnostic>,
    pub truncated: bool,
}

impl ErrorLog {
    /// Number of diagnostics that make the program invalid.
    pub fn repair_trigger_count(&self) -> usize {
        self.diagnostics
            .iter()
            .filter(|d| d.severity.triggers_repair())
            .count()
    }

    pub fn runtime_errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics
            .iter()
            .filter(|d| d.severity == Severity::RuntimeError)
    }

    /// Concatenates several logs, keeping every diagnostic.
    pub fn merge<'a>(logs: impl IntoIterator<Item = &'a ErrorLog>) -> ErrorLog {
        let mut merged = ErrorLog::default();
        for log in logs {
            if !merged.verbatim.is_empty() && !merged.verbatim.ends_with('\n') {
                merged.verbatim.push('\n');
            }
            merged.verbatim.push_str(&log.verbatim);
            merged.diagnostics.extend(log.diagnostics.iter().cloned());
            merged.truncated |= log.truncated;
        }
        merged
    }
}

/// Cuts `text` to at most `cap` bytes, keeping the head and ending on a line
/// boundary. Returns the kept prefix and whether anything was dropped.
pub fn cap_log(text: &str, cap: usize) -> (&str, bool) {
    if text.len() <= cap {
        return (text, false);
    }
    let mut end = cap;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    match text[..end].rfind('\n') {
        Some(pos) => (&text[..=pos], true),
        // A single line longer than the cap: fall back to a char boundary.
        None => (&text[..end], true),
    }
}

/// Iterates `(start, end)` byte ranges of lines, excluding the `\n`.
pub(crate) fn line_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    for (i, b) in text.bytes().enumerate() {
        if b == b'\n' {
            spans.push((start, i));
            start = i + 1;
        }
    }
    if start < text.len() {
        spans.push((start, text.len()));
    }
    spans
}

pub(crate) fn strip_cr(line: &str) -> &str {
    line.strip_suffix('\r').unwrap_or(line)
}
