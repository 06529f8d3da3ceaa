use std::sync::OnceLock;

use regex::Regex;

use super::DEFAULT_LOG_CAP;
use super::{cap_log, line_spans, strip_cr, Diagnostic, DiagnosticSource, ErrorLog, Severity};

fn located_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^(?P<file>[^:\s][^:]*?):(?P<line>\d+):(?:(?P<col>\d+):)? (?P<sev>fatal error|error|warning): (?P<msg>.*)$",
        )
        .unwrap()
    })
}

fn driver_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(?P<tool>(?:\S*/)?(?:clang|gcc|g\+\+|cc|c\+\+|collect2|ld(?:\.\w+)?)(?:\+\+)?(?:-[\d.]+)?): (?:fatal )?error: (?P<msg>.*)$")
            .unwrap()
    })
}

fn linker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(?:(?:\S*/)?ld(?:\.\w+)?: )?(?:[^:\s]+:\([^)]*\): )?(?P<msg>(?:undefined reference to|multiple definition of) .*)$")
            .unwrap()
    })
}

fn flag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[(?:-Werror,)?-W(?P<flag>[\w\-+=#]+)[^\]]*\]\s*$").unwrap())
}

/// Parses compiler/driver stderr, capped at [`DEFAULT_LOG_CAP`].
pub fn parse_compiler_log(text: &str) -> ErrorLog {
    parse_compiler_log_capped(text, DEFAULT_LOG_CAP)
}

pub fn parse_compiler_log_capped(text: &str, cap: usize) -> ErrorLog {
    let (kept, truncated) = cap_log(text, cap);
    let mut diagnostics = Vec::new();

    for (start, end) in line_spans(kept) {
        let raw = &kept[start..end];
        let line = strip_cr(raw);
        if let Some(caps) = located_re().captures(line) {
            let severity = match &caps["sev"] {
                "warning" => Severity::Warning,
                "fatal error" => Severity::Fatal,
                _ => Severity::Error,
            };
            let message = caps["msg"].to_string();
            diagnostics.push(Diagnostic {
                source: DiagnosticSource::Compiler,
                severity,
                kind: classify_message(&message),
                file: Some(caps["file"].to_string()),
                line: caps["line"].parse().ok(),
                column: caps.name("col").and_then(|c| c.as_str().parse().ok()),
                message,
                frames: Vec::new(),
                raw_excerpt: line.to_string(),
            });
        } else if let Some(caps) = linker_re()
            .captures(line)
            .or_else(|| driver_re().captures(line))
        {
            let message = caps["msg"].to_string();
            diagnostics.push(Diagnostic {
                source: DiagnosticSource::Compiler,
                severity: Severity::Fatal,
                kind: classify_message(&message),
                message,
                file: None,
                line: None,
                column: None,
                frames: Vec::new(),
                raw_excerpt: line.to_string(),
            });
        }
    }

    ErrorLog {
        verbatim: kept.to_string(),
        diagnostics,
        truncated,
    }
}

const MESSAGE_KINDS: &[(&str, &str)] = &[
    ("use of undeclared identifier", "undeclared-identifier"),
    ("call to undeclared function", "undeclared-function"),
    ("implicit declaration of function", "undeclared-function"),
    ("undefined reference to", "undefined-reference"),
    ("multiple definition of", "multiple-definition"),
    ("linker command failed", "linker-failed"),
    ("invalid instruction mnemonic", "inline-asm"),
    ("unknown directive", "inline-asm"),
    ("invalid operand", "inline-asm"),
    ("file not found", "file-not-found"),
    ("no such file or directory", "no-such-file"),
    ("unknown type name", "unknown-type-name"),
    ("redefinition of", "redefinition"),
    ("too few arguments", "argument-count"),
    ("too many arguments", "argument-count"),
    ("no member named", "no-member"),
    ("incompatible", "incompatible-types"),
    ("expected ", "expected-token"),
];

/// Maps a diagnostic message to a short machine word. Flagged diagnostics
/// (`[-Wfoo]`) use the flag name.
fn classify_message(message: &str) -> String {
    if let Some(caps) = flag_re().captures(message) {
        return caps["flag"].to_string();
    }
    let lower = message.to_ascii_lowercase();
    MESSAGE_KINDS
        .iter()
        .find(|(needle, _)| lower.contains(needle))
        .map(|(_, kind)| kind.to_string())
        .unwrap_or_else(|| "unclassified".to_string())
}
