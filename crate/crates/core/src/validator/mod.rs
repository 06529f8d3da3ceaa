//! Static (compile) and dynamic (sanitized run) validation of one program.

mod toolchain;

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{Language, ProgramId, ProgramStatus, TestProgram};
use crate::diagnostics::{self, ErrorLog, DEFAULT_LOG_CAP};
use crate::sandbox::{self, MemoryLimit, RunOutput, RunSpec, Termination};

pub use toolchain::{
    is_valid_opt_level, parse_byte_size, ProfileName, SanitizerProfile, ToolchainConfig,
    ToolchainError, DEFAULT_MEMORY_LIMIT, DEFAULT_TIMEOUT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Hang,
    ResourceExceeded,
    ToolError,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Hang => "hang",
            Verdict::ResourceExceeded => "resource_exceeded",
            Verdict::ToolError => "tool_error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub id: String,
    pub program_id: ProgramId,
    pub phase: Phase,
    pub verdict: Verdict,
    pub error_log: ErrorLog,
    pub exit_code: Option<i32>,
    pub wall_time_ms: u64,
    pub peak_memory_bytes: Option<u64>,
    pub profile: Option<ProfileName>,
}

impl ValidationOutcome {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// `<program>.r<round>.static` or `<program>.r<round>.dynamic.<profile>`.
pub fn outcome_id(
    program: &ProgramId,
    round: u32,
    phase: Phase,
    profile: Option<ProfileName>,
) -> String {
    match (phase, profile) {
        (Phase::Static, _) => format!("{program}.r{round}.static"),
        (Phase::Dynamic, Some(p)) => format!("{program}.r{round}.dynamic.{p}"),
        (Phase::Dynamic, None) => format!("{program}.r{round}.dynamic"),
    }
}

/// What a checker needs to know about the program under test. The source
/// is passed explicitly so repair candidates can be checked before they
/// replace the stored file.
#[derive(Debug, Clone, Copy)]
pub struct CheckRequest<'a> {
    pub program_id: &'a ProgramId,
    pub language: Language,
    pub source: &'a [u8],
    /// Distinguishes outcome ids across repair rounds.
    pub round: u32,
}

pub trait Checker: Send + Sync {
    fn check_static(&self, req: &CheckRequest<'_>) -> ValidationOutcome;
    fn check_dynamic(&self, req: &CheckRequest<'_>) -> Vec<ValidationOutcome>;
}

/// Result of running the full static-then-dynamic pipeline once.
#[derive(Debug, Clone)]
pub struct Validation {
    pub static_outcome: ValidationOutcome,
    pub dynamic_outcomes: Vec<ValidationOutcome>,
    pub status: Result<ProgramStatus, ToolFailure>,
}

impl Validation {
    pub fn outcomes(&self) -> impl Iterator<Item = &ValidationOutcome> {
        std::iter::once(&self.static_outcome).chain(&self.dynamic_outcomes)
    }

    /// The outcome that best explains the classification: the first non-pass
    /// one, else the last one run.
    pub fn deciding_outcome(&self) -> &ValidationOutcome {
        self.outcomes()
            .find(|o| !o.passed())
            .unwrap_or_else(|| self.dynamic_outcomes.last().unwrap_or(&self.static_outcome))
    }
}

/// Runs static validation and, if it passes, dynamic validation.
pub fn validate(checker: &dyn Checker, req: &CheckRequest<'_>) -> Validation {
    let static_outcome = checker.check_static(req);
    let dynamic_outcomes = if static_outcome.passed() {
        checker.check_dynamic(req)
    } else {
        Vec::new()
    };
    let status = classify(&static_outcome, &dynamic_outcomes);
    Validation {
        static_outcome,
        dynamic_outcomes,
        status,
    }
}

/// An infrastructure fault: the program could not be judged.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("tool error in {outcome_id}: {detail}")]
pub struct ToolFailure {
    pub outcome_id: String,
    pub detail: String,
}

impl ToolFailure {
    fn from_outcome(outcome: &ValidationOutcome) -> Self {
        let detail = outcome
            .error_log
            .verbatim
            .lines()
            .rev()
            .find(|l| !l.trim().is_empty())
            .unwrap_or("no output")
            .to_string();
        ToolFailure {
            outcome_id: outcome.id.clone(),
            detail,
        }
    }
}

pub fn classify(
    static_outcome: &ValidationOutcome,
    dynamic_outcomes: &[ValidationOutcome],
) -> Result<ProgramStatus, ToolFailure> {
    if let Some(bad) = std::iter::once(static_outcome)
        .chain(dynamic_outcomes)
        .find(|o| o.verdict == Verdict::ToolError)
    {
        return Err(ToolFailure::from_outcome(bad));
    }
    if !static_outcome.passed() {
        return Ok(ProgramStatus::StaticallyInvalid);
    }
    if dynamic_outcomes.iter().all(ValidationOutcome::passed) {
        Ok(ProgramStatus::Valid)
    } else {
        Ok(ProgramStatus::DynamicallyInvalid)
    }
}

/// Clang-backed checker. Every program gets a private scratch tree under
/// `work_dir/<program-id>/`.
#[derive(Debug, Clone)]
pub struct ClangValidator {
    cfg: ToolchainConfig,
}

pub fn validate_static(
    program: &TestProgram,
    source: &[u8],
    cfg: &ToolchainConfig,
) -> ValidationOutcome {
    ClangValidator::new(cfg.clone()).check_static(&request(program, source))
}

pub fn validate_dynamic(
    program: &TestProgram,
    source: &[u8],
    cfg: &ToolchainConfig,
) -> Vec<ValidationOutcome> {
    ClangValidator::new(cfg.clone()).check_dynamic(&request(program, source))
}

fn request<'a>(program: &'a TestProgram, source: &'a [u8]) -> CheckRequest<'a> {
    CheckRequest {
        program_id: &program.id,
        language: program.language,
        source,
        round: program.repair_attempts,
    }
}

/// Clang needs roughly 100 MiB just to start; small limits meant for test
/// binaries must not starve the compiler.
const COMPILER_MEMORY_FLOOR: u64 = 1 << 30;

const RESOURCE_KINDS: [&str; 3] = [
    "rss-limit-exceeded",
    "out-of-memory",
    "allocation-size-too-big",
];

/// Signals that mean the program itself misbehaved even without a report.
const FAULT_SIGNALS: [i32; 4] = [libc::SIGSEGV, libc::SIGBUS, libc::SIGILL, libc::SIGFPE];

struct Scratch {
    dir: PathBuf,
    source_name: String,
}

enum Build {
    Ok {
        log: String,
    },
    Failed {
        verdict: Verdict,
        log: String,
        output: Option<RunOutput>,
    },
}

impl ClangValidator {
    pub fn new(cfg: ToolchainConfig) -> Self {
        ClangValidator { cfg }
    }

    pub fn config(&self) -> &ToolchainConfig {
        &self.cfg
    }

    fn compiler(&self, language: Language) -> &Path {
        match language {
            Language::C => &self.cfg.compiler_path,
            Language::Cpp => &self.cfg.cxx_compiler_path,
        }
    }

    fn scratch(&self, req: &CheckRequest<'_>, phase_dir: &str) -> io::Result<Scratch> {
        let dir = self
            .cfg
            .work_dir
            .join(req.program_id.as_str())
            .join(phase_dir);
        fs::create_dir_all(&dir)?;
        let dir = dir.canonicalize()?;
        for stale in ["program.o", "prog"] {
            match fs::remove_file(dir.join(stale)) {
                Err(e) if e.kind() != io::ErrorKind::NotFound => return Err(e),
                _ => {}
            }
        }
        let source_name = format!("program.{}", req.language.extension());
        fs::write(dir.join(&source_name), req.source)?;
        Ok(Scratch { dir, source_name })
    }

    /// Compiles then links inside the scratch dir using relative paths, so
    /// the log is independent of where the scratch tree lives.
    fn build(&self, req: &CheckRequest<'_>, scratch: &Scratch, extra: &[String]) -> Build {
        let mut flags: Vec<String> = self.cfg.base_flags.clone();
        flags.push(self.cfg.opt_level.clone());
        // Keeps debug info, and with it the binary's build id, path independent.
        flags.push(format!("-ffile-prefix-map={}=.", scratch.dir.display()));
        flags.extend(extra.iter().cloned());
        let compiler = self.compiler(req.language);
        let steps: [Vec<String>; 2] = [
            [
                flags.clone(),
                vec![
                    "-c".into(),
                    scratch.source_name.clone(),
                    "-o".into(),
                    "program.o".into(),
                ],
            ]
            .concat(),
            [flags, vec!["program.o".into(), "-o".into(), "prog".into()]].concat(),
        ];
        let mut log = String::new();
        for args in steps {
            let spec = RunSpec::new(compiler, &scratch.dir)
                .args(args)
                .timeout(self.cfg.timeout)
                .memory(MemoryLimit::ResidentSet(
                    self.cfg.memory_limit_bytes.max(COMPILER_MEMORY_FLOOR),
                ));
            let output = match sandbox::run(&spec) {
                Ok(output) => output,
                Err(e) => {
                    let log = format!("failed to launch compiler {}: {e}\n", compiler.display());
                    return Build::Failed {
                        verdict: Verdict::ToolError,
                        log,
                        output: None,
                    };
                }
            };
            log.push_str(&scrub(&output.stderr, &scratch.dir));
            let verdict = match output.termination {
                Termination::Exited(0) => continue,
                Termination::TimedOut => Verdict::Hang,
                Termination::MemoryExceeded => Verdict::ResourceExceeded,
                _ if output.stderr.contains("LLVM ERROR: out of memory") => {
                    Verdict::ResourceExceeded
                }
                _ => Verdict::Fail,
            };
            return Build::Failed {
                verdict,
                log,
                output: Some(output),
            };
        }
        Build::Ok { log }
    }

    fn persist(&self, dir: &Path, outcome: &ValidationOutcome, raw_log: &str) {
        // Outcomes are also returned in memory; losing the on-disk copy only
        // costs debuggability.
        let _ = fs::write(dir.join(format!("{}.log", outcome.id)), raw_log);
        if let Ok(json) = serde_json::to_vec_pretty(outcome) {
            let _ = fs::write(dir.join(format!("{}.json", outcome.id)), json);
        }
    }

    fn run_profile(&self, req: &CheckRequest<'_>, profile: &SanitizerProfile) -> ValidationOutcome {
        let id = outcome_id(
            req.program_id,
            req.round,
            Phase::Dynamic,
            Some(profile.name),
        );
        let mut outcome = ValidationOutcome {
            id,
            program_id: req.program_id.clone(),
            phase: Phase::Dynamic,
            verdict: Verdict::ToolError,
            error_log: ErrorLog::default(),
            exit_code: None,
            wall_time_ms: 0,
            peak_memory_bytes: None,
            profile: Some(profile.name),
        };
        let scratch = match self.scratch(req, &format!("dynamic-{}", profile.name)) {
            Ok(s) => s,
            Err(e) => {
                outcome.error_log = plain_log(format!("cannot prepare scratch directory: {e}\n"));
                return outcome;
            }
        };
        match self.build(req, &scratch, &profile.compile_flags) {
            Build::Ok { .. } => {}
            Build::Failed { log, .. } => {
                // The program already compiled uninstrumented, so this is the
                // toolchain's problem rather than the program's.
                let log = format!(
                    "instrumented build failed for profile {}\n{log}",
                    profile.name
                );
                outcome.error_log = diagnostics::parse_compiler_log_capped(&log, DEFAULT_LOG_CAP);
                self.persist(&scratch.dir, &outcome, &log);
                return outcome;
            }
        }

        let mut reference: Option<(Termination, String)> = None;
        let mut raw = String::new();
        for _ in 0..self.cfg.determinism_runs {
            let run = self.execute(&scratch, profile);
            raw = run.raw;
            outcome.verdict = run.verdict;
            outcome.error_log = run.log;
            outcome.exit_code = run.exit_code;
            outcome.wall_time_ms = run.wall_time_ms;
            outcome.peak_memory_bytes = run.peak_memory;
            if outcome.verdict != Verdict::Pass {
                break;
            }
            let signature = (run.termination, run.stdout);
            match &reference {
                None => reference = Some(signature),
                Some(first) if *first != signature => {
                    outcome.verdict = Verdict::Fail;
                    let note = format!(
                        "[refuzz] nondeterministic result across {} runs: {:?} then {:?}\n",
                        self.cfg.determinism_runs, first.0, signature.0
                    );
                    outcome.error_log.verbatim.push_str(&note);
                    raw.push_str(&note);
                    break;
                }
                Some(_) => {}
            }
        }
        self.persist(&scratch.dir, &outcome, &raw);
        outcome
    }

    fn execute(&self, scratch: &Scratch, profile: &SanitizerProfile) -> Run {
        let limit_mb = self.cfg.memory_limit_mb();
        let mut env = profile.env_pairs();
        for key in ["ASAN_OPTIONS", "MSAN_OPTIONS", "TSAN_OPTIONS"] {
            let extra = format!("hard_rss_limit_mb={limit_mb}");
            match env.iter_mut().find(|(k, _)| k == key) {
                Some((_, v)) if v.is_empty() => *v = extra,
                Some((_, v)) => {
                    v.push(':');
                    v.push_str(&extra);
                }
                None => env.push((key.to_string(), extra)),
            }
        }
        let mut spec = RunSpec::new(scratch.dir.join("prog"), &scratch.dir)
            .timeout(self.cfg.timeout)
            .memory(MemoryLimit::ResidentSet(self.cfg.memory_limit_bytes));
        for (k, v) in env {
            spec = spec.env(k, v);
        }
        let output = match sandbox::run(&spec) {
            Ok(o) => o,
            Err(e) => {
                let text = format!("failed to launch test binary: {e}\n");
                return Run {
                    verdict: Verdict::ToolError,
                    log: plain_log(text.clone()),
                    raw: text,
                    termination: Termination::Exited(-1),
                    stdout: String::new(),
                    exit_code: None,
                    wall_time_ms: 0,
                    peak_memory: None,
                };
            }
        };
        let stderr = scrub(&output.stderr, &scratch.dir);
        let mut log = diagnostics::parse_sanitizer_log_capped(&stderr, DEFAULT_LOG_CAP);
        let resource_hit = log
            .diagnostics
            .iter()
            .any(|d| RESOURCE_KINDS.contains(&d.kind.as_str()));
        let has_runtime_errors = log.runtime_errors().next().is_some();
        let verdict = match output.termination {
            Termination::TimedOut => Verdict::Hang,
            Termination::MemoryExceeded => Verdict::ResourceExceeded,
            _ if resource_hit => Verdict::ResourceExceeded,
            _ if has_runtime_errors => Verdict::Fail,
            Termination::Signaled(sig) if FAULT_SIGNALS.contains(&sig) => Verdict::Fail,
            _ => Verdict::Pass,
        };
        let mut note = match output.termination {
            Termination::TimedOut => Some(format!(
                "[refuzz] killed after timeout of {}s\n",
                self.cfg.timeout.as_secs_f64()
            )),
            Termination::MemoryExceeded => Some(format!(
                "[refuzz] killed after exceeding memory limit of {limit_mb} MiB\n"
            )),
            Termination::Signaled(sig) if verdict == Verdict::Fail && !has_runtime_errors => {
                Some(format!(
                    "[refuzz] program terminated by {}\n",
                    sandbox::signal_name(sig)
                ))
            }
            _ => None,
        };
        let mut raw = stderr;
        if let Some(note) = note.take() {
            if !log.verbatim.is_empty() && !log.verbatim.ends_with('\n') {
                log.verbatim.push('\n');
            }
            log.verbatim.push_str(&note);
            raw.push_str(&note);
        }
        Run {
            verdict,
            log,
            raw,
            termination: output.termination,
            exit_code: match output.termination {
                Termination::Exited(code) => Some(code),
                _ => None,
            },
            wall_time_ms: duration_ms(output.wall_time),
            peak_memory: output.peak_rss_bytes,
            stdout: output.stdout,
        }
    }
}

struct Run {
    verdict: Verdict,
    log: ErrorLog,
    raw: String,
    termination: Termination,
    stdout: String,
    exit_code: Option<i32>,
    wall_time_ms: u64,
    peak_memory: Option<u64>,
}

impl Checker for ClangValidator {
    fn check_static(&self, req: &CheckRequest<'_>) -> ValidationOutcome {
        let mut outcome = ValidationOutcome {
            id: outcome_id(req.program_id, req.round, Phase::Static, None),
            program_id: req.program_id.clone(),
            phase: Phase::Static,
            verdict: Verdict::ToolError,
            error_log: ErrorLog::default(),
            exit_code: None,
            wall_time_ms: 0,
            peak_memory_bytes: None,
            profile: None,
        };
        let scratch = match self.scratch(req, "static") {
            Ok(s) => s,
            Err(e) => {
                outcome.error_log = plain_log(format!("cannot prepare scratch directory: {e}\n"));
                return outcome;
            }
        };
        let started = std::time::Instant::now();
        let (verdict, log, output) = match self.build(req, &scratch, &[]) {
            Build::Ok { log } => (Verdict::Pass, log, None),
            Build::Failed {
                verdict,
                log,
                output,
            } => (verdict, log, output),
        };
        outcome.wall_time_ms = duration_ms(started.elapsed());
        outcome.verdict = verdict;
        outcome.exit_code = match output.as_ref().map(|o| o.termination) {
            Some(Termination::Exited(code)) => Some(code),
            None if verdict == Verdict::Pass => Some(0),
            _ => None,
        };
        outcome.peak_memory_bytes = output.as_ref().and_then(|o| o.peak_rss_bytes);
        outcome.error_log = diagnostics::parse_compiler_log_capped(&log, DEFAULT_LOG_CAP);
        if verdict == Verdict::Hang {
            let note = format!(
                "[refuzz] compiler killed after timeout of {}s\n",
                self.cfg.timeout.as_secs_f64()
            );
            outcome.error_log.verbatim.push_str(&note);
        }
        // The uninstrumented binary is never run.
        let _ = fs::remove_file(scratch.dir.join("prog"));
        let _ = fs::remove_file(scratch.dir.join("program.o"));
        self.persist(&scratch.dir, &outcome, &log);
        outcome
    }

    fn check_dynamic(&self, req: &CheckRequest<'_>) -> Vec<ValidationOutcome> {
        self.cfg
            .sanitizer_profiles
            .iter()
            .map(|profile| self.run_profile(req, profile))
            .collect()
    }
}

fn plain_log(text: String) -> ErrorLog {
    ErrorLog {
        verbatim: text,
        diagnostics: Vec::new(),
        truncated: false,
    }
}

fn duration_ms(d: Duration) -> u64 {
    u64::try_from(d.as_millis()).unwrap_or(u64::MAX)
}

/// Removes the absolute scratch prefix so logs only mention relative names.
fn scrub(text: &str, dir: &Path) -> String {
    let prefix = format!("{}/", dir.display());
    text.replace(&prefix, "")
}
