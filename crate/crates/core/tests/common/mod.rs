#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use refuzz::corpus::{ProgramId, ProgramStatus};
use refuzz::diagnostics::ErrorLog;
use refuzz::llm::{BackendKind, CompletionResponse, LanguageModel, LlmError};
use refuzz::repair::RepairTrace;
use refuzz::validator::{
    outcome_id, CheckRequest, Checker, Phase, ProfileName, ValidationOutcome, Verdict,
};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub const COMPILER_LOGS: [&str; 7] = [
    "undeclared_identifier",
    "missing_semicolon",
    "implicit_declaration",
    "incompatible_types",
    "unknown_type",
    "undefined_reference",
    "invalid_asm",
];

pub const SANITIZER_LOGS: [&str; 10] = [
    "stack_buffer_overflow",
    "heap_buffer_overflow",
    "heap_use_after_free",
    "double_free",
    "global_buffer_overflow",
    "division_by_zero",
    "signed_overflow",
    "shift_out_of_bounds",
    "index_out_of_bounds",
    "uninitialized_value",
];

pub const STATIC_BAD: &str = "STATIC_BAD";
pub const DYNAMIC_BAD: &str = "DYNAMIC_BAD";
pub const TOOL_BROKEN: &str = "TOOL_BROKEN";

/// Judges programs by marker strings instead of compiling them.
pub struct MarkerChecker;

fn outcome(
    req: &CheckRequest<'_>,
    phase: Phase,
    profile: Option<ProfileName>,
    verdict: Verdict,
) -> ValidationOutcome {
    ValidationOutcome {
        id: outcome_id(req.program_id, req.round, phase, profile),
        program_id: req.program_id.clone(),
        phase,
        verdict,
        error_log: ErrorLog {
            verbatim: format!("{verdict} for round {}\n", req.round),
            ..ErrorLog::default()
        },
        exit_code: Some(0),
        wall_time_ms: 1,
        peak_memory_bytes: None,
        profile,
    }
}

impl Checker for MarkerChecker {
    fn check_static(&self, req: &CheckRequest<'_>) -> ValidationOutcome {
        let text = String::from_utf8_lossy(req.source);
        let verdict = if text.contains(TOOL_BROKEN) {
            Verdict::ToolError
        } else if text.contains(STATIC_BAD) {
            Verdict::Fail
        } else {
            Verdict::Pass
        };
        outcome(req, Phase::Static, None, verdict)
    }

    fn check_dynamic(&self, req: &CheckRequest<'_>) -> Vec<ValidationOutcome> {
        let text = String::from_utf8_lossy(req.source);
        let asan = if text.contains(DYNAMIC_BAD) {
            Verdict::Fail
        } else {
            Verdict::Pass
        };
        vec![
            outcome(
                req,
                Phase::Dynamic,
                Some(ProfileName::AddressUndefined),
                asan,
            ),
            outcome(
                req,
                Phase::Dynamic,
                Some(ProfileName::Memory),
                Verdict::Pass,
            ),
        ]
    }
}

/// One scripted model reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reply {
    Fixed,
    StillStatic,
    StillDynamic,
    Prose,
    Transport,
}

pub fn program_text(tag: &str, marker: &str) -> String {
    format!("// {tag}\nint main(void) {{\n  return 0; /* {marker} */\n}}\n")
}

/// Replies per program tag (the first line of the source), in order.
/// Programs whose script is exhausted get prose.
pub struct ScriptedModel {
    scripts: Mutex<HashMap<String, VecDeque<Reply>>>,
}

impl ScriptedModel {
    pub fn new(scripts: HashMap<String, Vec<Reply>>) -> Self {
        ScriptedModel {
            scripts: Mutex::new(scripts.into_iter().map(|(k, v)| (k, v.into())).collect()),
        }
    }
}

impl LanguageModel for ScriptedModel {
    fn complete(&self, prompt: &str) -> Result<CompletionResponse, LlmError> {
        let tag = prompt
            .lines()
            .find_map(|l| l.strip_prefix("// "))
            .unwrap_or_default()
            .to_string();
        let reply = self
            .scripts
            .lock()
            .unwrap()
            .get_mut(&tag)
            .and_then(|q| q.pop_front())
            .unwrap_or(Reply::Prose);
        let text = match reply {
            Reply::Fixed => format!("```c\n{}```", program_text(&tag, "ok")),
            Reply::StillStatic => format!("```c\n{}```", program_text(&tag, STATIC_BAD)),
            Reply::StillDynamic => format!("```c\n{}```", program_text(&tag, DYNAMIC_BAD)),
            Reply::Prose => "I cannot fix this.".to_string(),
            Reply::Transport => {
                return Err(LlmError::Transport {
                    attempts: 2,
                    message: "connection refused".into(),
                })
            }
        };
        Ok(CompletionResponse {
            text,
            latency_ms: 0,
            backend: BackendKind::Mock,
            truncated: false,
        })
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }
}

pub fn id(s: &str) -> ProgramId {
    ProgramId::from(s)
}

/// A quarantined trace must end on a failed check: the last extracted
/// candidate failed, or no candidate ever replaced the failing original.
pub fn quarantine_violation(trace: &RepairTrace) -> Option<String> {
    for a in &trace.attempts {
        if !a.extracted && (a.reverify_static.is_some() || a.reverify_dynamic.is_some()) {
            return Some(format!(
                "{}: attempt {} re-verified without a candidate",
                trace.program_id, a.attempt_index
            ));
        }
        if a.reverify_static == Some(Verdict::Fail) && a.reverify_dynamic.is_some() {
            return Some(format!(
                "{}: attempt {} ran after a static failure",
                trace.program_id, a.attempt_index
            ));
        }
    }
    if trace.final_status != ProgramStatus::CrashOnly {
        return None;
    }
    match trace.attempts.iter().rev().find(|a| a.extracted) {
        Some(last) => {
            let failed = last.reverify_static != Some(Verdict::Pass)
                || last.reverify_dynamic.is_some_and(|v| v != Verdict::Pass);
            (!failed).then(|| {
                format!(
                    "{}: quarantined after a passing candidate",
                    trace.program_id
                )
            })
        }
        None => (trace.initial_status == ProgramStatus::Valid)
            .then(|| format!("{}: quarantined a program that was valid", trace.program_id)),
    }
}
