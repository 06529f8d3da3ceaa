//! Line-delimited JSON journal of corpus events.
//!
//! Each line is one [`JournalRecord`]. A trailing line without a newline is
//! a torn write from an interrupted process and is dropped on open; any
//! other undecodable line is corruption.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::program::{relative_path, Language, Origin, ProgramId, ProgramStatus, TestProgram};

pub const JOURNAL_FILE: &str = "corpus.journal";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JournalEvent {
    Ingest,
    Transition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    pub id: ProgramId,
    pub event: JournalEvent,
    pub status: ProgramStatus,
    pub outcome_ref: Option<String>,
    pub origin: Origin,
    pub sha256: String,
    pub language: Language,
    pub repair_attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<ProgramId>,
}

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("journal io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt journal line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
}

/// The index rebuilt from a journal, plus bookkeeping for new appends.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Replayed {
    pub programs: BTreeMap<ProgramId, TestProgram>,
    pub next_seq: u64,
    pub ingested: u64,
    /// Byte length of the well-formed prefix; anything after it is torn.
    pub valid_len: u64,
    pub torn_tail: bool,
}

/// Rebuilds the index by replaying every record from an empty state.
pub fn replay(path: &Path) -> Result<Replayed, JournalError> {
    let text = match std::fs::read(path) {
        Ok(bytes) => bytes,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Replayed::default()),
        Err(source) => {
            return Err(JournalError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    replay_bytes(&text)
}

pub fn replay_bytes(bytes: &[u8]) -> Result<Replayed, JournalError> {
    let mut state = Replayed::default();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < bytes.len() {
        line_no += 1;
        let Some(rel_end) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            // No newline: interrupted append.
            state.torn_tail = true;
            break;
        };
        let line = &bytes[offset..offset + rel_end];
        offset += rel_end + 1;
        if line.iter().all(u8::is_ascii_whitespace) {
            state.valid_len = offset as u64;
            continue;
        }
        let record: JournalRecord =
            serde_json::from_slice(line).map_err(|e| JournalError::Corrupt {
                line: line_no,
                reason: e.to_string(),
            })?;
        apply(&mut state, record).map_err(|reason| JournalError::Corrupt {
            line: line_no,
            reason,
        })?;
        state.valid_len = offset as u64;
    }
    Ok(state)
}

fn apply(state: &mut Replayed, record: JournalRecord) -> Result<(), String> {
    if record.seq != state.next_seq {
        return Err(format!(
            "expected seq {}, found {}",
            state.next_seq, record.seq
        ));
    }
    state.next_seq += 1;
    match record.event {
        JournalEvent::Ingest => {
            if state.programs.contains_key(&record.id) {
                return Err(format!("duplicate id {}", record.id));
            }
            if record.status != ProgramStatus::Raw {
                return Err(format!(
                    "ingest of {} with status {}",
                    record.id, record.status
                ));
            }
            state.ingested += 1;
            let program = TestProgram {
                source_path: relative_path(&record.id, record.language, record.status),
                id: record.id.clone(),
                language: record.language,
                origin: record.origin,
                status: record.status,
                created_at: record.timestamp,
                repair_attempts: record.repair_attempts,
                last_outcome_ref: record.outcome_ref,
                sha256: record.sha256,
                duplicate_of: record.duplicate_of,
            };
            state.programs.insert(record.id, program);
        }
        JournalEvent::Transition => {
            let program = state
                .programs
                .get_mut(&record.id)
                .ok_or_else(|| format!("transition of unknown id {}", record.id))?;
            if !program.status.can_transition_to(record.status) {
                return Err(format!(
                    "illegal transition {} -> {} for {}",
                    program.status, record.status, record.id
                ));
            }
            program.status = record.status;
            program.source_path = relative_path(&program.id, program.language, record.status);
            program.repair_attempts = record.repair_attempts;
            program.last_outcome_ref = record.outcome_ref;
            program.sha256 = record.sha256;
        }
    }
    Ok(())
}

/// Single appender; callers serialize access.
pub struct JournalWriter {
    path: PathBuf,
    file: File,
}

impl JournalWriter {
    /// Opens for append, first cutting off any torn tail at `valid_len`.
    pub fn open(path: &Path, valid_len: u64) -> Result<Self, JournalError> {
        let io_err = |source| JournalError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)
            .map_err(io_err)?;
        if file.metadata().map_err(io_err)?.len() > valid_len {
            file.set_len(valid_len).map_err(io_err)?;
        }
        Ok(JournalWriter {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, record: &JournalRecord) -> Result<(), JournalError> {
        let mut line = serde_json::to_vec(record).expect("journal records serialize");
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.sync_data())
            .map_err(|source| JournalError::Io {
                path: self.path.clone(),
                source,
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(seq: u64, id: &str, event: JournalEvent, status: ProgramStatus) -> JournalRecord {
        JournalRecord {
            seq,
            timestamp: DateTime::parse_from_rfc3339("2025-01-01T00:00:00Z")
                .unwrap()
                .into(),
            id: ProgramId::from(id),
            event,
            status,
            outcome_ref: None,
            origin: Origin::External,
            sha256: "00".repeat(32),
            language: Language::C,
            repair_attempts: 0,
            duplicate_of: None,
        }
    }

    fn encode(records: &[JournalRecord]) -> Vec<u8> {
        let mut out = Vec::new();
        for r in records {
            out.extend(serde_json::to_vec(r).unwrap());
            out.push(b'\n');
        }
        out
    }

    #[test]
    fn torn_tail_is_ignored() {
        let mut bytes = encode(&[record(0, "a", JournalEvent::Ingest, ProgramStatus::Raw)]);
        let good = bytes.len() as u64;
        bytes.extend_from_slice(b"{\"seq\":1,\"timest");
        let state = replay_bytes(&bytes).unwrap();
        assert!(state.torn_tail);
        assert_eq!(state.valid_len, good);
        assert_eq!(state.programs.len(), 1);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let mut bytes = b"garbage\n".to_vec();
        bytes.extend(encode(&[record(
            0,
            "a",
            JournalEvent::Ingest,
            ProgramStatus::Raw,
        )]));
        assert!(matches!(
            replay_bytes(&bytes),
            Err(JournalError::Corrupt { line: 1, .. })
        ));
    }

    #[test]
    fn illegal_transition_in_journal_is_rejected() {
        let bytes = encode(&[
            record(0, "a", JournalEvent::Ingest, ProgramStatus::Raw),
            record(1, "a", JournalEvent::Transition, ProgramStatus::Valid),
            record(2, "a", JournalEvent::Transition, ProgramStatus::Raw),
        ]);
        assert!(replay_bytes(&bytes).is_err());
    }

    #[test]
    fn sequence_gap_is_rejected() {
        let bytes = encode(&[
            record(0, "a", JournalEvent::Ingest, ProgramStatus::Raw),
            record(2, "b", JournalEvent::Ingest, ProgramStatus::Raw),
        ]);
        assert!(replay_bytes(&bytes).is_err());
    }

    #[test]
    fn record_field_names_are_stable() {
        let value =
            serde_json::to_value(record(0, "a", JournalEvent::Ingest, ProgramStatus::Raw)).unwrap();
        for key in [
            "seq",
            "timestamp",
            "id",
            "event",
            "status",
            "outcome_ref",
            "origin",
            "sha256",
        ] {
            assert!(value.get(key).is_some(), "missing {key}");
        }
        assert_eq!(value["event"], "ingest");
        assert_eq!(value["status"], "raw");
    }
}
