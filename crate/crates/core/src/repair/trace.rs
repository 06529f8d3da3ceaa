//! On-disk audit trail: `traces/<program-id>/{original.c, trace.json,
//! attempt-<k>/{prompt.txt, response.txt, candidate.c, outcomes.json}}`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ErrorClass, RepairError};
use crate::corpus::{ProgramId, ProgramStatus, TestProgram};
use crate::validator::{Validation, ValidationOutcome, Verdict};

pub const TRACES_DIR: &str = "traces";
pub const TRACE_FILE: &str = "trace.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairAttempt {
    /// 1-based.
    pub attempt_index: u32,
    pub error_class: ErrorClass,
    pub prompt: String,
    /// Path of the verbatim model reply, relative to the trace directory.
    pub response_ref: String,
    pub extracted: bool,
    pub reverify_static: Option<Verdict>,
    pub reverify_dynamic: Option<Verdict>,
    #[serde(default)]
    pub outcome_ids: Vec<String>,
    pub wall_time_ms: u64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub prompt_over_budget: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub response_truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortKind {
    ToolError,
    Transport,
    Protocol,
}

/// Why a program was left unresolved. Its stored status is untouched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Abort {
    pub kind: AbortKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairTrace {
    pub program_id: ProgramId,
    pub initial_status: ProgramStatus,
    pub attempts: Vec<RepairAttempt>,
    pub final_status: ProgramStatus,
    pub total_time_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort: Option<Abort>,
}

impl RepairTrace {
    pub fn is_complete(&self) -> bool {
        self.abort.is_none() && self.final_status.is_terminal()
    }

    /// Valid without the model ever being asked.
    pub fn valid_without_repair(&self) -> bool {
        self.final_status == ProgramStatus::Valid && self.attempts.is_empty()
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RepairError + '_ {
    move |source| RepairError::Trace {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<(), RepairError> {
    fs::write(&path, bytes).map_err(io_err(&path))
}

pub fn load_trace(dir: &Path) -> Result<Option<RepairTrace>, RepairError> {
    let path = dir.join(TRACE_FILE);
    match fs::read(&path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| io_err(&path)(io::Error::new(io::ErrorKind::InvalidData, e))),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(&path)(e)),
    }
}

/// Loads the trace of an earlier, interrupted run or starts a new one,
/// keeping a copy of the pre-repair source.
pub(super) fn begin(
    dir: &Path,
    program: &TestProgram,
    source: &[u8],
) -> Result<RepairTrace, RepairError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    if let Some(mut trace) = load_trace(dir)? {
        trace.abort = None;
        return Ok(trace);
    }
    let original = dir.join(format!("original.{}", program.language.extension()));
    if !original.exists() {
        write(original, source)?;
    }
    Ok(RepairTrace {
        program_id: program.id.clone(),
        initial_status: program.status,
        attempts: Vec::new(),
        final_status: program.status,
        total_time_ms: 0,
        abort: None,
    })
}

pub(super) fn save(dir: &Path, trace: &RepairTrace) -> Result<(), RepairError> {
    let json = serde_json::to_vec_pretty(trace).expect("traces serialize");
    let tmp = dir.join(format!("{TRACE_FILE}.tmp"));
    write(tmp.clone(), &json)?;
    let path = dir.join(TRACE_FILE);
    fs::rename(&tmp, &path).map_err(io_err(&path))
}

pub(super) fn response_ref(attempt: u32) -> String {
    format!("attempt-{attempt}/response.txt")
}

pub(super) fn write_attempt(
    dir: &Path,
    program: &TestProgram,
    attempt: &RepairAttempt,
    response: &str,
    candidate: Option<&str>,
    validation: &Validation,
) -> Result<(), RepairError> {
    let adir = dir.join(format!("attempt-{}", attempt.attempt_index));
    fs::create_dir_all(&adir).map_err(io_err(&adir))?;
    write(adir.join("prompt.txt"), attempt.prompt.as_bytes())?;
    write(adir.join("response.txt"), response.as_bytes())?;
    if let Some(code) = candidate {
        write(
            adir.join(format!("candidate.{}", program.language.extension())),
            code.as_bytes(),
        )?;
        let outcomes: Vec<&ValidationOutcome> = validation.outcomes().collect();
        write(
            adir.join("outcomes.json"),
            &serde_json::to_vec_pretty(&outcomes).expect("outcomes serialize"),
        )?;
    }
    Ok(())
}
