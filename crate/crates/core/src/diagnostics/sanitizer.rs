use std::sync::OnceLock;

use regex::Regex;

use super::DEFAULT_LOG_CAP;
use super::{
    cap_log, line_spans, strip_cr, Diagnostic, DiagnosticSource, ErrorLog, Severity, StackFrame,
};

// ==1234==ERROR: AddressSanitizer: stack-buffer-overflow on address ...
// WARNING: ThreadSanitizer: data race (pid=1234)
fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^(?:==(?P<pid>\d+)==\s*)?(?:(?P<level>ERROR|WARNING):\s*)?(?P<tool>[A-Za-z]+)Sanitizer: (?P<rest>.*)$",
        )
        .unwrap()
    })
}

fn inline_ubsan_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^(?P<file>[^:\s][^:]*?):(?P<line>\d+):(?P<col>\d+): runtime error: (?P<msg>.*)$",
        )
        .unwrap()
    })
}

fn frame_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*#(?P<idx>\d+)\s+(?P<pc>0x[0-9a-fA-F]+)(?:\s+(?P<rest>.*))?$").unwrap()
    })
}

fn summary_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^SUMMARY: (?P<tool>[A-Za-z]+)Sanitizer: (?P<kind>\S+)").unwrap())
}

fn aborting_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^==\d+==ABORTING\s*$").unwrap())
}

fn location_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?P<file>.+?):(?P<line>\d+)(?::(?P<col>\d+))?$").unwrap())
}

/// Parses sanitizer runtime output, capped at [`DEFAULT_LOG_CAP`].
pub fn parse_sanitizer_log(text: &str) -> ErrorLog {
    parse_sanitizer_log_capped(text, DEFAULT_LOG_CAP)
}

pub fn parse_sanitizer_log_capped(text: &str, cap: usize) -> ErrorLog {
    let (kept, truncated) = cap_log(text, cap);
    let spans = line_spans(kept);
    let lines: Vec<&str> = spans.iter().map(|&(s, e)| strip_cr(&kept[s..e])).collect();

    let mut diagnostics = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if let Some(header) = block_header(lines[i]) {
            let end = block_end(&lines, i);
            diagnostics.push(block_diagnostic(
                &header,
                &lines[i..end],
                excerpt(kept, &spans, i, end),
            ));
            i = end;
        } else if let Some(caps) = inline_ubsan_re().captures(lines[i]) {
            let mut end = i + 1;
            while end < lines.len() && frame_re().is_match(lines[end]) {
                end += 1;
            }
            if end < lines.len() && lines[end].starts_with("SUMMARY: UndefinedBehaviorSanitizer:") {
                end += 1;
            }
            let message = caps["msg"].to_string();
            let kind = ubsan_kind(&message);
            diagnostics.push(Diagnostic {
                source: DiagnosticSource::Ubsan,
                severity: Severity::RuntimeError,
                kind,
                message,
                file: Some(caps["file"].to_string()),
                line: caps["line"].parse().ok(),
                column: caps["col"].parse().ok(),
                frames: parse_frames(&lines[i + 1..end]),
                raw_excerpt: excerpt(kept, &spans, i, end).to_string(),
            });
            i = end;
        } else {
            i += 1;
        }
    }

    ErrorLog {
        verbatim: kept.to_string(),
        diagnostics,
        truncated,
    }
}

struct Header {
    source: DiagnosticSource,
    rest: String,
}

fn block_header(line: &str) -> Option<Header> {
    let caps = header_re().captures(line)?;
    // A bare "FooSanitizer: x" without pid or level is prose, not a report.
    if caps.name("pid").is_none() && caps.name("level").is_none() {
        return None;
    }
    let source = match &caps["tool"] {
        "Address" | "Leak" | "HWAddress" => DiagnosticSource::Asan,
        "UndefinedBehavior" => DiagnosticSource::Ubsan,
        "Memory" => DiagnosticSource::Msan,
        "Thread" => DiagnosticSource::Tsan,
        _ => return None,
    };
    Some(Header {
        source,
        rest: caps["rest"].trim_end().to_string(),
    })
}

/// A block runs through its SUMMARY line, or up to (not including) the next
/// report start, an ABORTING marker, or the end of input.
fn block_end(lines: &[&str], start: usize) -> usize {
    let mut j = start + 1;
    while j < lines.len() {
        let line = lines[j];
        if summary_re().is_match(line) {
            return j + 1;
        }
        if block_header(line).is_some()
            || inline_ubsan_re().is_match(line)
            || aborting_re().is_match(line)
        {
            break;
        }
        j += 1;
    }
    // Trailing blank lines are not part of the report.
    while j > start + 1 && lines[j - 1].trim().is_empty() {
        j -= 1;
    }
    j
}

fn excerpt<'a>(text: &'a str, spans: &[(usize, usize)], first: usize, end: usize) -> &'a str {
    let start = spans[first].0;
    let stop = spans[end - 1].1;
    let slice = &text[start..stop];
    slice.strip_suffix('\r').unwrap_or(slice)
}

const PHRASE_KINDS: &[(&str, &str)] = &[
    ("hard rss limit exhausted", "rss-limit-exceeded"),
    ("out of memory", "out-of-memory"),
    ("allocator is out of memory", "out-of-memory"),
    ("requested allocation size", "allocation-size-too-big"),
    ("detected memory leaks", "memory-leak"),
];

fn block_diagnostic(header: &Header, block: &[&str], raw: &str) -> Diagnostic {
    let summary_kind = block
        .iter()
        .find_map(|l| summary_re().captures(l).map(|c| c["kind"].to_string()));
    let frames = parse_frames(&block[1..]);
    let kind = block_kind(&header.rest, summary_kind.as_deref());

    let (file, line, column) = frames
        .iter()
        .filter_map(|f| f.location.as_deref())
        .find_map(|loc| {
            let caps = location_re().captures(loc)?;
            Some((
                Some(caps["file"].to_string()),
                caps["line"].parse().ok(),
                caps.name("col").and_then(|c| c.as_str().parse().ok()),
            ))
        })
        .unwrap_or((None, None, None));

    Diagnostic {
        source: header.source,
        severity: Severity::RuntimeError,
        kind,
        message: header.rest.clone(),
        file,
        line,
        column,
        frames,
        raw_excerpt: raw.to_string(),
    }
}

// Messages that embed operand values get a value-free kind.
const UBSAN_KINDS: &[(&str, &str)] = &[
    (r"^index -?\d+ out of bounds", "index out of bounds"),
    (
        r"^shift exponent -?\d+ is too large",
        "shift exponent too large",
    ),
    (
        r"^shift exponent -?\d+ is negative",
        "negative shift exponent",
    ),
    (
        r"^left shift of negative value",
        "left shift of negative value",
    ),
    (
        r"^left shift of .* cannot be represented",
        "left shift overflow",
    ),
    (
        r"^(?:load of|store to|member access within) null pointer",
        "null pointer access",
    ),
    (
        r"^(?:load of|store to|member access within) misaligned address",
        "misaligned address",
    ),
    (
        r"^load of value .* is not a valid value",
        "invalid value load",
    ),
    (
        r"^negation of .* cannot be represented",
        "signed integer overflow",
    ),
    (
        r"is outside the range of representable values",
        "float cast overflow",
    ),
    (
        r"^(?:applying .* offset|pointer index expression) .*overflow",
        "pointer overflow",
    ),
    (r"^null pointer passed as argument", "null pointer argument"),
    (
        r"^execution reached the end of a value-returning function",
        "missing return",
    ),
];

fn ubsan_kinds() -> &'static [(Regex, &'static str)] {
    static RE: OnceLock<Vec<(Regex, &'static str)>> = OnceLock::new();
    RE.get_or_init(|| {
        UBSAN_KINDS
            .iter()
            .map(|(p, k)| (Regex::new(p).unwrap(), *k))
            .collect()
    })
}

fn ubsan_kind(message: &str) -> String {
    if let Some((_, kind)) = ubsan_kinds().iter().find(|(re, _)| re.is_match(message)) {
        return kind.to_string();
    }
    message
        .split(':')
        .next()
        .map(str::trim)
        .filter(|k| !k.is_empty())
        .unwrap_or("unclassified")
        .to_string()
}

fn block_kind(rest: &str, summary_kind: Option<&str>) -> String {
    let lower = rest.to_ascii_lowercase();
    if let Some((_, kind)) = PHRASE_KINDS.iter().find(|(p, _)| lower.starts_with(p)) {
        return kind.to_string();
    }
    let cut = [" on ", " (", ": ", " at "]
        .iter()
        .filter_map(|sep| rest.find(sep))
        .min()
        .unwrap_or(rest.len());
    let head = rest[..cut].trim();
    if !head.is_empty() && !head.contains(char::is_whitespace) {
        return head.to_string();
    }
    if let Some(kind) = summary_kind.filter(|k| k.contains('-')) {
        return kind.to_string();
    }
    if head.is_empty() {
        "unclassified".to_string()
    } else {
        head.to_string()
    }
}

/// Parses the first stack trace in `lines`: frames from `#0` up to the point
/// where numbering restarts (ASan prints allocation/free stacks after the
/// faulting one).
fn parse_frames(lines: &[&str]) -> Vec<StackFrame> {
    let mut frames: Vec<StackFrame> = Vec::new();
    for line in lines {
        let Some(caps) = frame_re().captures(line) else {
            if frames.is_empty() {
                continue;
            }
            // Blank line or prose ends the first trace; other lines (e.g.
            // symbolizer warnings) are skipped only before it starts.
            break;
        };
        let Ok(index) = caps["idx"].parse::<u32>() else {
            break;
        };
        if index as usize != frames.len() {
            if frames.is_empty() {
                continue;
            }
            break;
        }
        let (symbol, location) = split_frame_rest(caps.name("rest").map_or("", |m| m.as_str()));
        frames.push(StackFrame {
            index,
            pc: Some(caps["pc"].to_string()),
            symbol,
            location,
        });
    }
    frames
}

fn split_frame_rest(rest: &str) -> (Option<String>, Option<String>) {
    let mut rest = rest.trim();
    if let Some(pos) = rest.find(" (BuildId:") {
        rest = rest[..pos].trim_end();
    }
    if rest.is_empty() {
        return (None, None);
    }
    let Some(body) = rest.strip_prefix("in ") else {
        return (None, Some(rest.to_string()));
    };
    match body.rsplit_once(' ') {
        Some((symbol, loc)) if looks_like_location(loc) => {
            (Some(symbol.trim().to_string()), Some(loc.to_string()))
        }
        _ => (Some(body.to_string()), None),
    }
}

fn looks_like_location(token: &str) -> bool {
    (token.starts_with('(') && token.ends_with(')')) || location_re().is_match(token)
}
