//! The detect, prompt, fix, re-verify loop.

mod trace;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, CorpusStore, ProgramId, ProgramStatus, TestProgram, Transition};
use crate::diagnostics::ErrorLog;
use crate::llm::{extract_code, LanguageModel, LlmError};
use crate::report::{compute_stats, CampaignStats};
use crate::validator::{self, CheckRequest, Checker, Phase, Validation, Verdict};

pub use trace::{load_trace, Abort, AbortKind, RepairAttempt, RepairTrace, TRACES_DIR, TRACE_FILE};

pub const PROMPT_HEAD: &str = "Given the following C program and its compilation error log with";
pub const LOG_DELIMITER: &str = "--- ERROR LOG ---";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    CompilationErrors,
    SanitizerErrors,
}

impl ErrorClass {
    pub fn phrase(self) -> &'static str {
        match self {
            ErrorClass::CompilationErrors => "compilation errors",
            ErrorClass::SanitizerErrors => "sanitizer errors",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairPolicy {
    pub max_attempts: u32,
    /// Substituted into the prompt's optimisation-level slot.
    pub opt_level_arg: String,
    /// Prompts larger than this are still sent but flagged in the trace.
    pub prompt_budget_bytes: Option<usize>,
}

impl Default for RepairPolicy {
    fn default() -> Self {
        RepairPolicy {
            max_attempts: 2,
            opt_level_arg: "-O0".to_string(),
            prompt_budget_bytes: None,
        }
    }
}

/// The fixed repair prompt: instruction line, program, then the verbatim log
/// after a delimiter line.
pub fn build_prompt(
    source: &str,
    log: &ErrorLog,
    class: ErrorClass,
    opt_level_arg: &str,
) -> String {
    let mut prompt = format!(
        "{PROMPT_HEAD} {opt_level_arg} optimisation level, analyze and correct the program to resolve {}.\n",
        class.phrase()
    );
    prompt.push_str(source);
    if !source.ends_with('\n') {
        prompt.push('\n');
    }
    prompt.push_str(LOG_DELIMITER);
    prompt.push('\n');
    prompt.push_str(&log.verbatim);
    prompt
}

/// Error class and log to feed back for an invalid validation result.
/// Static failures always take precedence.
pub fn feedback(validation: &Validation) -> (ErrorClass, ErrorLog) {
    if !validation.static_outcome.passed() {
        return (
            ErrorClass::CompilationErrors,
            validation.static_outcome.error_log.clone(),
        );
    }
    let failing: Vec<&ErrorLog> = validation
        .dynamic_outcomes
        .iter()
        .filter(|o| !o.passed())
        .map(|o| &o.error_log)
        .collect();
    (ErrorClass::SanitizerErrors, ErrorLog::merge(failing))
}

fn dynamic_verdict(validation: &Validation) -> Option<Verdict> {
    if !validation.static_outcome.passed() {
        return None;
    }
    Some(
        validation
            .dynamic_outcomes
            .iter()
            .map(|o| o.verdict)
            .find(|v| *v != Verdict::Pass)
            .unwrap_or(Verdict::Pass),
    )
}

#[derive(Debug, thiserror::Error)]
pub enum RepairError {
    #[error("program {0} is {1} and cannot be refuzzed")]
    NotRepairable(ProgramId, ProgramStatus),
    #[error("unknown program {0}")]
    UnknownId(ProgramId),
    #[error("policy allows {policy} attempts but the corpus enforces {corpus}")]
    PolicyMismatch { policy: u32, corpus: u32 },
    #[error("max_attempts must be at least 1")]
    ZeroAttempts,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("trace io error on {path}: {source}")]
    Trace {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Everything a campaign produced, in program-id order.
#[derive(Debug)]
pub struct CampaignReport {
    pub stats: CampaignStats,
    pub traces: Vec<RepairTrace>,
    /// Programs that could not be processed at all (corpus or trace I/O).
    pub failures: Vec<(ProgramId, String)>,
}

impl CampaignReport {
    /// Programs left unresolved by infrastructure faults.
    pub fn aborted(&self) -> impl Iterator<Item = &RepairTrace> {
        self.traces.iter().filter(|t| t.abort.is_some())
    }
}

pub struct Refuzzer<'a> {
    store: &'a CorpusStore,
    checker: &'a dyn Checker,
    model: &'a dyn LanguageModel,
    policy: RepairPolicy,
    traces_root: PathBuf,
}

impl<'a> Refuzzer<'a> {
    pub fn new(
        store: &'a CorpusStore,
        checker: &'a dyn Checker,
        model: &'a dyn LanguageModel,
        policy: RepairPolicy,
    ) -> Result<Self, RepairError> {
        if policy.max_attempts == 0 {
            return Err(RepairError::ZeroAttempts);
        }
        let corpus = store.config().max_attempts;
        if policy.max_attempts != corpus {
            return Err(RepairError::PolicyMismatch {
                policy: policy.max_attempts,
                corpus,
            });
        }
        Ok(Refuzzer {
            traces_root: store.root().join(TRACES_DIR),
            store,
            checker,
            model,
            policy,
        })
    }

    pub fn traces_root(&self) -> &Path {
        &self.traces_root
    }

    fn check(&self, program: &TestProgram, source: &[u8], round: u32) -> Validation {
        validator::validate(
            self.checker,
            &CheckRequest {
                program_id: &program.id,
                language: program.language,
                source,
                round,
            },
        )
    }

    /// Journals the current state unless nothing changed.
    fn commit(
        &self,
        program: &mut TestProgram,
        status: ProgramStatus,
        attempts: u32,
        outcome: &str,
        source: Option<&[u8]>,
    ) -> Result<(), RepairError> {
        if status == program.status && attempts == program.repair_attempts && source.is_none() {
            return Ok(());
        }
        let mut change = Transition::to(status).outcome(outcome).attempts(attempts);
        change.new_source = source;
        *program = self.store.apply(&program.id, change)?;
        Ok(())
    }

    /// Runs the loop for one program until it is Valid, quarantined, or an
    /// infrastructure fault stops it. Resumes from the stored attempt count.
    pub fn refuzz_one(&self, id: &ProgramId) -> Result<RepairTrace, RepairError> {
        let started = Instant::now();
        let mut program = self
            .store
            .get(id)
            .ok_or_else(|| RepairError::UnknownId(id.clone()))?;
        if program.status.is_terminal() {
            return Err(RepairError::NotRepairable(id.clone(), program.status));
        }
        let mut source = self.store.source_bytes(id)?;
        let dir = self.traces_root.join(id.as_str());
        let mut trace = trace::begin(&dir, &program, &source)?;
        let prior_ms = trace.total_time_ms;
        let mut attempts = program.repair_attempts;
        // Attempts journaled by an interrupted run but missing from its
        // trace are not re-created; the trace just starts later.
        trace.attempts.retain(|a| a.attempt_index <= attempts);

        let mut validation = self.check(&program, &source, attempts);
        let mut dirty = false;
        loop {
            let status = match &validation.status {
                Ok(status) => *status,
                Err(failure) => {
                    trace.abort = Some(Abort {
                        kind: AbortKind::ToolError,
                        detail: failure.to_string(),
                    });
                    break;
                }
            };
            let outcome_id = validation.deciding_outcome().id.clone();
            let changed = dirty.then_some(source.as_slice());
            if status == ProgramStatus::Valid {
                self.commit(&mut program, status, attempts, &outcome_id, changed)?;
                break;
            }
            if attempts >= self.policy.max_attempts {
                self.commit(
                    &mut program,
                    ProgramStatus::CrashOnly,
                    attempts,
                    &outcome_id,
                    changed,
                )?;
                break;
            }
            self.commit(&mut program, status, attempts, &outcome_id, changed)?;
            dirty = false;

            let attempt_started = Instant::now();
            let (class, log) = feedback(&validation);
            let text = String::from_utf8_lossy(&source);
            let prompt = build_prompt(&text, &log, class, &self.policy.opt_level_arg);
            let reply = match self.model.complete(&prompt) {
                Ok(reply) => reply,
                Err(e) => {
                    let kind = match e {
                        LlmError::Protocol(_) => AbortKind::Protocol,
                        _ => AbortKind::Transport,
                    };
                    trace.abort = Some(Abort {
                        kind,
                        detail: e.to_string(),
                    });
                    break;
                }
            };
            attempts += 1;
            let mut attempt = RepairAttempt {
                attempt_index: attempts,
                error_class: class,
                prompt_over_budget: self
                    .policy
                    .prompt_budget_bytes
                    .is_some_and(|cap| prompt.len() > cap),
                response_truncated: reply.truncated,
                response_ref: trace::response_ref(attempts),
                prompt,
                extracted: false,
                reverify_static: None,
                reverify_dynamic: None,
                outcome_ids: Vec::new(),
                wall_time_ms: 0,
            };
            let candidate = extract_code(&reply.text);
            if let Some(code) = &candidate {
                source = code.clone().into_bytes();
                dirty = true;
                validation = self.check(&program, &source, attempts);
                attempt.extracted = true;
                attempt.reverify_static = Some(validation.static_outcome.verdict);
                attempt.reverify_dynamic = dynamic_verdict(&validation);
                attempt.outcome_ids = validation.outcomes().map(|o| o.id.clone()).collect();
            }
            attempt.wall_time_ms = millis(attempt_started);
            trace::write_attempt(
                &dir,
                &program,
                &attempt,
                &reply.text,
                candidate.as_deref(),
                &validation,
            )?;
            trace.attempts.push(attempt);
            trace.total_time_ms = prior_ms + millis(started);
            trace::save(&dir, &trace)?;
        }
        trace.final_status = program.status;
        trace.total_time_ms = prior_ms + millis(started);
        trace::save(&dir, &trace)?;
        Ok(trace)
    }

    /// Processes every non-terminal program once on `workers` threads and
    /// returns campaign-wide statistics.
    pub fn refuzz_corpus(&self, workers: usize) -> Result<CampaignReport, RepairError> {
        let pending: Vec<ProgramId> = self
            .store
            .programs()
            .into_iter()
            .filter(|p| !p.status.is_terminal())
            .map(|p| p.id)
            .collect();
        let next = AtomicUsize::new(0);
        let results = Mutex::new(Vec::with_capacity(pending.len()));
        std::thread::scope(|scope| {
            for _ in 0..workers.max(1).min(pending.len().max(1)) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(id) = pending.get(i) else { break };
                    let result = self.refuzz_one(id);
                    results
                        .lock()
                        .unwrap_or_else(|e| e.into_inner())
                        .push((id.clone(), result));
                });
            }
        });
        let mut results = results.into_inner().unwrap_or_else(|e| e.into_inner());
        results.sort_by(|a, b| a.0.cmp(&b.0));
        let mut failures = Vec::new();
        for (id, result) in results {
            if let Err(e) = result {
                failures.push((id, e.to_string()));
            }
        }
        let (stats, traces) = campaign_stats(self.store, &self.traces_root)?;
        Ok(CampaignReport {
            stats,
            traces,
            failures,
        })
    }
}

/// Statistics over the whole corpus from the persisted traces. Valid
/// programs without a trace were valid before any repair ran.
pub fn campaign_stats(
    store: &CorpusStore,
    traces_root: &Path,
) -> Result<(CampaignStats, Vec<RepairTrace>), RepairError> {
    let programs = store.programs();
    let mut traces = Vec::new();
    let mut pre_valid = 0u64;
    for program in &programs {
        match load_trace(&traces_root.join(program.id.as_str()))? {
            Some(mut trace) => {
                // The journal is authoritative if the trace lags behind it.
                trace.final_status = program.status;
                traces.push(trace);
            }
            None if program.status == ProgramStatus::Valid => pre_valid += 1,
            None => {}
        }
    }
    let stats = compute_stats(&traces, pre_valid, programs.len() as u64)
        .expect("traces and pre-valid programs are disjoint subsets of the corpus");
    Ok((stats, traces))
}

fn millis(since: Instant) -> u64 {
    u64::try_from(since.elapsed().as_millis()).unwrap_or(u64::MAX)
}

/// Outcome phases in a validation, for logs and summaries.
pub fn describe(validation: &Validation) -> String {
    validation
        .outcomes()
        .map(|o| match (o.phase, o.profile) {
            (Phase::Static, _) => format!("static={}", o.verdict),
            (Phase::Dynamic, Some(p)) => format!("{p}={}", o.verdict),
            (Phase::Dynamic, None) => format!("dynamic={}", o.verdict),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_matches_the_template() {
        let log = ErrorLog {
            verbatim: "program.c:1:1: error: boom\n".into(),
            ..Default::default()
        };
        let prompt = build_prompt(
            "int main(void){}",
            &log,
            ErrorClass::CompilationErrors,
            "-O0",
        );
        assert_eq!(
            prompt,
            "Given the following C program and its compilation error log with -O0 optimisation level, \
             analyze and correct the program to resolve compilation errors.\n\
             int main(void){}\n--- ERROR LOG ---\nprogram.c:1:1: error: boom\n"
        );
        let prompt = build_prompt(
            "x\n",
            &ErrorLog::default(),
            ErrorClass::SanitizerErrors,
            "-O2",
        );
        assert!(prompt.starts_with(
            "Given the following C program and its compilation error log with -O2 optimisation level, \
             analyze and correct the program to resolve sanitizer errors.\n"
        ));
        assert!(prompt.ends_with("x\n--- ERROR LOG ---\n"));
    }
}
