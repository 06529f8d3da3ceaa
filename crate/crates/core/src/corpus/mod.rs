//! Persistent corpus of test programs.
//!
//! Layout under the root:
//!
//! ```text
//! incoming/     Raw programs
//! work/         statically or dynamically invalid programs (and scratch)
//! valid/        the seed bank
//! crash_only/   programs the repair loop could not fix
//! corpus.journal
//! ```
//!
//! Every state change is appended to the journal *before* files are moved,
//! so an interrupted process leaves either a record whose file move is
//! finished on the next [`CorpusStore::open`], or no record at all.

mod journal;
mod program;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::Utc;
use sha2::{Digest, Sha256};

pub use journal::{
    replay, replay_bytes, JournalError, JournalEvent, JournalRecord, Replayed, JOURNAL_FILE,
};
pub use program::{Language, LayoutDir, Origin, ProgramId, ProgramStatus, TestProgram};

use journal::JournalWriter;
use program::{file_name, relative_path};

pub const DEFAULT_MAX_FILE_BYTES: u64 = 1024 * 1024;
pub const DEFAULT_MAX_ATTEMPTS: u32 = 2;

const STAGED_PREFIX: &str = ".staged-";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("unknown program id {0}")]
    UnknownId(ProgramId),
    #[error("illegal transition for {id}: {from} -> {to}")]
    IllegalTransition {
        id: ProgramId,
        from: ProgramStatus,
        to: ProgramStatus,
    },
    #[error("program {0} already has a transition in flight")]
    Busy(ProgramId),
    #[error("program {id}: {attempts} repair attempts exceeds the limit of {max}")]
    AttemptBound {
        id: ProgramId,
        attempts: u32,
        max: u32,
    },
    #[error("program {id}: crash-only requires {max} used repair attempts, found {attempts}")]
    PrematureQuarantine {
        id: ProgramId,
        attempts: u32,
        max: u32,
    },
    #[error("program {id}: source file missing from every layout directory")]
    MissingSource { id: ProgramId },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusConfig {
    pub max_file_bytes: u64,
    pub max_attempts: u32,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            max_file_bytes: DEFAULT_MAX_FILE_BYTES,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IngestFailure {
    Unreadable { path: PathBuf, reason: String },
    Oversize { path: PathBuf, size: u64, cap: u64 },
}

impl std::fmt::Display for IngestFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IngestFailure::Unreadable { path, reason } => {
                write!(f, "{}: unreadable: {reason}", path.display())
            }
            IngestFailure::Oversize { path, size, cap } => {
                write!(
                    f,
                    "{}: {size} bytes exceeds the {cap}-byte cap",
                    path.display()
                )
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct IngestReport {
    pub programs: Vec<TestProgram>,
    pub failures: Vec<IngestFailure>,
}

/// What [`CorpusStore::open`] had to repair after an interrupted run.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct RecoveryReport {
    pub torn_tail_dropped: bool,
    pub files_moved: usize,
    pub staged_removed: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StatusCounts {
    pub raw: usize,
    pub statically_invalid: usize,
    pub dynamically_invalid: usize,
    pub valid: usize,
    pub crash_only: usize,
}

impl StatusCounts {
    pub fn total(&self) -> usize {
        self.raw + self.statically_invalid + self.dynamically_invalid + self.valid + self.crash_only
    }

    pub fn get(&self, status: ProgramStatus) -> usize {
        match status {
            ProgramStatus::Raw => self.raw,
            ProgramStatus::StaticallyInvalid => self.statically_invalid,
            ProgramStatus::DynamicallyInvalid => self.dynamically_invalid,
            ProgramStatus::Valid => self.valid,
            ProgramStatus::CrashOnly => self.crash_only,
        }
    }

    fn bump(&mut self, status: ProgramStatus) {
        match status {
            ProgramStatus::Raw => self.raw += 1,
            ProgramStatus::StaticallyInvalid => self.statically_invalid += 1,
            ProgramStatus::DynamicallyInvalid => self.dynamically_invalid += 1,
            ProgramStatus::Valid => self.valid += 1,
            ProgramStatus::CrashOnly => self.crash_only += 1,
        }
    }
}

/// A requested state change. `new_source` replaces the program text (a
/// repaired candidate); `repair_attempts` defaults to the current count.
#[derive(Debug, Clone)]
pub struct Transition<'a> {
    pub status: ProgramStatus,
    pub outcome_ref: Option<String>,
    pub repair_attempts: Option<u32>,
    pub new_source: Option<&'a [u8]>,
}

impl<'a> Transition<'a> {
    pub fn to(status: ProgramStatus) -> Self {
        Transition {
            status,
            outcome_ref: None,
            repair_attempts: None,
            new_source: None,
        }
    }

    pub fn outcome(mut self, outcome_ref: impl Into<String>) -> Self {
        self.outcome_ref = Some(outcome_ref.into());
        self
    }

    pub fn attempts(mut self, attempts: u32) -> Self {
        self.repair_attempts = Some(attempts);
        self
    }

    pub fn source(mut self, source: &'a [u8]) -> Self {
        self.new_source = Some(source);
        self
    }
}

struct State {
    writer: JournalWriter,
    next_seq: u64,
    ingested: u64,
    programs: BTreeMap<ProgramId, TestProgram>,
    by_hash: HashMap<String, ProgramId>,
}

pub struct CorpusStore {
    root: PathBuf,
    config: CorpusConfig,
    state: Mutex<State>,
    in_flight: Mutex<HashSet<ProgramId>>,
    recovery: RecoveryReport,
}

impl CorpusStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, CorpusError> {
        Self::open_with(root, CorpusConfig::default())
    }

    /// Opens (creating if needed) a store, replays its journal and finishes
    /// any file moves an interrupted process left behind.
    pub fn open_with(root: impl AsRef<Path>, config: CorpusConfig) -> Result<Self, CorpusError> {
        let root = root.as_ref().to_path_buf();
        for dir in LayoutDir::ALL {
            let path = root.join(dir.name());
            fs::create_dir_all(&path).map_err(io_err(&path))?;
        }
        let journal_path = root.join(JOURNAL_FILE);
        let replayed = journal::replay(&journal_path)?;
        let writer = JournalWriter::open(&journal_path, replayed.valid_len)?;

        let mut recovery = RecoveryReport {
            torn_tail_dropped: replayed.torn_tail,
            ..Default::default()
        };
        reconcile(&root, &replayed.programs, &mut recovery)?;

        let mut by_hash = HashMap::new();
        for program in replayed.programs.values() {
            by_hash
                .entry(program.sha256.clone())
                .or_insert_with(|| program.id.clone());
        }

        Ok(CorpusStore {
            root,
            config,
            state: Mutex::new(State {
                writer,
                next_seq: replayed.next_seq,
                ingested: replayed.ingested,
                programs: replayed.programs,
                by_hash,
            }),
            in_flight: Mutex::new(HashSet::new()),
            recovery,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> CorpusConfig {
        self.config
    }

    pub fn journal_path(&self) -> PathBuf {
        self.root.join(JOURNAL_FILE)
    }

    pub fn recovery(&self) -> &RecoveryReport {
        &self.recovery
    }

    /// Copies each file into `incoming/` as a Raw program. Per-file failures
    /// are reported without stopping the others.
    pub fn ingest(&self, paths: &[PathBuf], origin: Origin) -> Result<IngestReport, CorpusError> {
        let mut report = IngestReport::default();
        for path in paths {
            match read_capped(path, self.config.max_file_bytes) {
                Ok(bytes) => {
                    let language = Language::from_path(path);
                    report
                        .programs
                        .push(self.ingest_bytes(&bytes, language, origin)?);
                }
                Err(failure) => report.failures.push(failure),
            }
        }
        Ok(report)
    }

    /// Adds one program from memory (used by the generator).
    pub fn ingest_bytes(
        &self,
        bytes: &[u8],
        language: Language,
        origin: Origin,
    ) -> Result<TestProgram, CorpusError> {
        let sha = sha256_hex(bytes);
        let mut state = self.state.lock().unwrap();
        let id = ProgramId::new(state.ingested, &sha);
        let incoming = self.root.join(LayoutDir::Incoming.name());
        let name = file_name(&id, language);
        let staged = incoming.join(format!("{STAGED_PREFIX}{name}"));
        write_synced(&staged, bytes)?;

        let duplicate_of = state.by_hash.get(&sha).cloned();
        let record = JournalRecord {
            seq: state.next_seq,
            timestamp: Utc::now(),
            id: id.clone(),
            event: JournalEvent::Ingest,
            status: ProgramStatus::Raw,
            outcome_ref: None,
            origin,
            sha256: sha.clone(),
            language,
            repair_attempts: 0,
            duplicate_of: duplicate_of.clone(),
        };
        state.writer.append(&record)?;
        state.next_seq += 1;
        state.ingested += 1;

        let target = incoming.join(&name);
        fs::rename(&staged, &target).map_err(io_err(&target))?;

        let program = TestProgram {
            source_path: relative_path(&id, language, ProgramStatus::Raw),
            id: id.clone(),
            language,
            origin,
            status: ProgramStatus::Raw,
            created_at: record.timestamp,
            repair_attempts: 0,
            last_outcome_ref: None,
            sha256: sha.clone(),
            duplicate_of,
        };
        state.by_hash.entry(sha).or_insert(id.clone());
        state.programs.insert(id, program.clone());
        Ok(program)
    }

    pub fn transition(
        &self,
        id: &ProgramId,
        new_status: ProgramStatus,
        outcome_ref: Option<&str>,
    ) -> Result<TestProgram, CorpusError> {
        let mut change = Transition::to(new_status);
        change.outcome_ref = outcome_ref.map(str::to_string);
        self.apply(id, change)
    }

    /// Journals a status change, then moves (or rewrites) the source file
    /// into the directory the new status mandates.
    pub fn apply(
        &self,
        id: &ProgramId,
        change: Transition<'_>,
    ) -> Result<TestProgram, CorpusError> {
        let _guard = InFlight::claim(&self.in_flight, id)?;

        let current = self
            .get(id)
            .ok_or_else(|| CorpusError::UnknownId(id.clone()))?;
        if !current.status.can_transition_to(change.status) {
            return Err(CorpusError::IllegalTransition {
                id: id.clone(),
                from: current.status,
                to: change.status,
            });
        }
        let attempts = change.repair_attempts.unwrap_or(current.repair_attempts);
        if attempts > self.config.max_attempts {
            return Err(CorpusError::AttemptBound {
                id: id.clone(),
                attempts,
                max: self.config.max_attempts,
            });
        }
        if change.status == ProgramStatus::CrashOnly && attempts != self.config.max_attempts {
            return Err(CorpusError::PrematureQuarantine {
                id: id.clone(),
                attempts,
                max: self.config.max_attempts,
            });
        }

        let old_path = self.root.join(&current.source_path);
        let new_rel = relative_path(id, current.language, change.status);
        let new_path = self.root.join(&new_rel);
        let staged = new_path.with_file_name(format!("{STAGED_PREFIX}{}", current.file_name()));
        let sha = match change.new_source {
            Some(bytes) => {
                write_synced(&staged, bytes)?;
                sha256_hex(bytes)
            }
            None => current.sha256.clone(),
        };

        let updated = {
            let mut state = self.state.lock().unwrap();
            let record = JournalRecord {
                seq: state.next_seq,
                timestamp: Utc::now(),
                id: id.clone(),
                event: JournalEvent::Transition,
                status: change.status,
                outcome_ref: change.outcome_ref.clone(),
                origin: current.origin,
                sha256: sha.clone(),
                language: current.language,
                repair_attempts: attempts,
                duplicate_of: None,
            };
            state.writer.append(&record)?;
            state.next_seq += 1;
            let program = state.programs.get_mut(id).expect("claimed id is indexed");
            program.status = change.status;
            program.source_path = new_rel;
            program.repair_attempts = attempts;
            program.last_outcome_ref = change.outcome_ref;
            program.sha256 = sha;
            program.clone()
        };

        if change.new_source.is_some() {
            fs::rename(&staged, &new_path).map_err(io_err(&new_path))?;
            if old_path != new_path {
                remove_if_exists(&old_path)?;
            }
        } else if old_path != new_path {
            fs::rename(&old_path, &new_path).map_err(io_err(&new_path))?;
        }
        Ok(updated)
    }

    pub fn get(&self, id: &ProgramId) -> Option<TestProgram> {
        self.state.lock().unwrap().programs.get(id).cloned()
    }

    /// All programs, ordered by id (ingestion order).
    pub fn programs(&self) -> Vec<TestProgram> {
        self.state
            .lock()
            .unwrap()
            .programs
            .values()
            .cloned()
            .collect()
    }

    pub fn with_status(&self, status: ProgramStatus) -> Vec<TestProgram> {
        self.state
            .lock()
            .unwrap()
            .programs
            .values()
            .filter(|p| p.status == status)
            .cloned()
            .collect()
    }

    /// Programs eligible for downstream fuzzing: exactly the Valid ones.
    pub fn seed_bank(&self) -> Vec<TestProgram> {
        self.with_status(ProgramStatus::Valid)
    }

    pub fn counts(&self) -> StatusCounts {
        let mut counts = StatusCounts::default();
        for program in self.state.lock().unwrap().programs.values() {
            counts.bump(program.status);
        }
        counts
    }

    pub fn ingested(&self) -> u64 {
        self.state.lock().unwrap().ingested
    }

    /// Snapshot of the in-memory index.
    pub fn index(&self) -> BTreeMap<ProgramId, TestProgram> {
        self.state.lock().unwrap().programs.clone()
    }

    pub fn path_of(&self, program: &TestProgram) -> PathBuf {
        self.root.join(&program.source_path)
    }

    pub fn source_bytes(&self, id: &ProgramId) -> Result<Vec<u8>, CorpusError> {
        let program = self
            .get(id)
            .ok_or_else(|| CorpusError::UnknownId(id.clone()))?;
        let path = self.path_of(&program);
        fs::read(&path).map_err(io_err(&path))
    }

    pub fn source(&self, id: &ProgramId) -> Result<String, CorpusError> {
        Ok(String::from_utf8_lossy(&self.source_bytes(id)?).into_owned())
    }
}

struct InFlight<'a> {
    set: &'a Mutex<HashSet<ProgramId>>,
    id: ProgramId,
}

impl<'a> InFlight<'a> {
    fn claim(set: &'a Mutex<HashSet<ProgramId>>, id: &ProgramId) -> Result<Self, CorpusError> {
        if !set.lock().unwrap().insert(id.clone()) {
            return Err(CorpusError::Busy(id.clone()));
        }
        Ok(InFlight {
            set,
            id: id.clone(),
        })
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.set.lock().unwrap().remove(&self.id);
    }
}

/// Puts every indexed program's file where its status says it belongs.
fn reconcile(
    root: &Path,
    programs: &BTreeMap<ProgramId, TestProgram>,
    report: &mut RecoveryReport,
) -> Result<(), CorpusError> {
    let mut indexed_names = HashSet::new();
    for program in programs.values() {
        let name = program.file_name();
        indexed_names.insert(name.clone());
        let target = root.join(&program.source_path);
        let target_dir = program.status.layout_dir();
        let staged_in_target = target.with_file_name(format!("{STAGED_PREFIX}{name}"));

        if !target.exists() {
            if staged_in_target.exists() {
                fs::rename(&staged_in_target, &target).map_err(io_err(&target))?;
                report.files_moved += 1;
            } else {
                let found = LayoutDir::ALL
                    .iter()
                    .filter(|d| **d != target_dir)
                    .map(|d| root.join(d.name()).join(&name))
                    .find(|p| p.exists());
                match found {
                    Some(from) => {
                        fs::rename(&from, &target).map_err(io_err(&target))?;
                        report.files_moved += 1;
                    }
                    None => {
                        return Err(CorpusError::MissingSource {
                            id: program.id.clone(),
                        })
                    }
                }
            }
        }
        // Stale copies left by a rewrite whose old file was not yet removed.
        for dir in LayoutDir::ALL {
            if dir != target_dir {
                let stray = root.join(dir.name()).join(&name);
                if stray.exists() {
                    remove_if_exists(&stray)?;
                    report.files_moved += 1;
                }
            }
        }
    }
    // Staged files never made it into the journal.
    for dir in LayoutDir::ALL {
        let path = root.join(dir.name());
        for entry in fs::read_dir(&path).map_err(io_err(&path))? {
            let entry = entry.map_err(io_err(&path))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with(STAGED_PREFIX) {
                remove_if_exists(&entry.path())?;
                report.staged_removed += 1;
            }
        }
    }
    Ok(())
}

fn read_capped(path: &Path, cap: u64) -> Result<Vec<u8>, IngestFailure> {
    let unreadable = |reason: String| IngestFailure::Unreadable {
        path: path.to_path_buf(),
        reason,
    };
    let meta = fs::metadata(path).map_err(|e| unreadable(e.to_string()))?;
    if !meta.is_file() {
        return Err(unreadable("not a regular file".to_string()));
    }
    if meta.len() > cap {
        return Err(IngestFailure::Oversize {
            path: path.to_path_buf(),
            size: meta.len(),
            cap,
        });
    }
    let bytes = fs::read(path).map_err(|e| unreadable(e.to_string()))?;
    if bytes.len() as u64 > cap {
        return Err(IngestFailure::Oversize {
            path: path.to_path_buf(),
            size: bytes.len() as u64,
            cap,
        });
    }
    Ok(bytes)
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<(), CorpusError> {
    use std::io::Write;
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(bytes)
        .and_then(|_| file.sync_data())
        .map_err(io_err(path))
}

fn remove_if_exists(path: &Path) -> Result<(), CorpusError> {
    match fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(CorpusError::Io {
            path: path.to_path_buf(),
            source: e,
        }),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
