use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    C,
    Cpp,
}

impl Language {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("cc" | "cpp" | "cxx" | "C" | "c++") => Language::Cpp,
            _ => Language::C,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Language::C => "c",
            Language::Cpp => "cpp",
        }
    }
}

/// Which fuzzer produced a program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Blackbox,
    Fuzz4all,
    Whitefox,
    External,
}

impl FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "blackbox" => Ok(Origin::Blackbox),
            "fuzz4all" => Ok(Origin::Fuzz4all),
            "whitefox" => Ok(Origin::Whitefox),
            "external" => Ok(Origin::External),
            other => Err(format!("unknown origin `{other}`")),
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Blackbox => "blackbox",
            Origin::Fuzz4all => "fuzz4all",
            Origin::Whitefox => "whitefox",
            Origin::External => "external",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgramStatus {
    Raw,
    StaticallyInvalid,
    DynamicallyInvalid,
    Valid,
    CrashOnly,
}

impl ProgramStatus {
    pub const ALL: [ProgramStatus; 5] = [
        ProgramStatus::Raw,
        ProgramStatus::StaticallyInvalid,
        ProgramStatus::DynamicallyInvalid,
        ProgramStatus::Valid,
        ProgramStatus::CrashOnly,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, ProgramStatus::Valid | ProgramStatus::CrashOnly)
    }

    pub fn can_transition_to(self, next: ProgramStatus) -> bool {
        use ProgramStatus::*;
        match self {
            Raw => matches!(next, StaticallyInvalid | DynamicallyInvalid | Valid),
            StaticallyInvalid | DynamicallyInvalid => next != Raw,
            Valid | CrashOnly => false,
        }
    }

    pub fn layout_dir(self) -> LayoutDir {
        match self {
            ProgramStatus::Raw => LayoutDir::Incoming,
            ProgramStatus::StaticallyInvalid | ProgramStatus::DynamicallyInvalid => LayoutDir::Work,
            ProgramStatus::Valid => LayoutDir::Valid,
            ProgramStatus::CrashOnly => LayoutDir::CrashOnly,
        }
    }
}

impl fmt::Display for ProgramStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProgramStatus::Raw => "raw",
            ProgramStatus::StaticallyInvalid => "statically_invalid",
            ProgramStatus::DynamicallyInvalid => "dynamically_invalid",
            ProgramStatus::Valid => "valid",
            ProgramStatus::CrashOnly => "crash_only",
        })
    }
}

/// The fixed sub-directories of a corpus root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayoutDir {
    Incoming,
    Valid,
    CrashOnly,
    Work,
}

impl LayoutDir {
    pub const ALL: [LayoutDir; 4] = [
        LayoutDir::Incoming,
        LayoutDir::Valid,
        LayoutDir::CrashOnly,
        LayoutDir::Work,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayoutDir::Incoming => "incoming",
            LayoutDir::Valid => "valid",
            LayoutDir::CrashOnly => "crash_only",
            LayoutDir::Work => "work",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProgramId(String);

impl ProgramId {
    /// `<ingestion sequence>-<content hash prefix>`.
    pub fn new(sequence: u64, sha256_hex: &str) -> Self {
        ProgramId(format!(
            "{sequence:06}-{}",
            &sha256_hex[..12.min(sha256_hex.len())]
        ))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for ProgramId {
    fn from(s: &str) -> Self {
        ProgramId(s.to_string())
    }
}

impl fmt::Display for ProgramId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestProgram {
    pub id: ProgramId,
    /// Path relative to the corpus root.
    pub source_path: PathBuf,
    pub language: Language,
    pub origin: Origin,
    pub status: ProgramStatus,
    pub created_at: DateTime<Utc>,
    pub repair_attempts: u32,
    pub last_outcome_ref: Option<String>,
    pub sha256: String,
    /// Earlier program with byte-identical content at ingestion time.
    pub duplicate_of: Option<ProgramId>,
}

impl TestProgram {
    pub fn file_name(&self) -> String {
        file_name(&self.id, self.language)
    }

    pub fn is_duplicate(&self) -> bool {
        self.duplicate_of.is_some()
    }
}

pub(crate) fn file_name(id: &ProgramId, language: Language) -> String {
    format!("{}.{}", id, language.extension())
}

pub(crate) fn relative_path(id: &ProgramId, language: Language, status: ProgramStatus) -> PathBuf {
    Path::new(status.layout_dir().name()).join(file_name(id, language))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ProgramStatus::*;

    #[test]
    fn legal_transitions_match_the_table() {
        let legal = [
            (Raw, StaticallyInvalid),
            (Raw, DynamicallyInvalid),
            (Raw, Valid),
            (StaticallyInvalid, StaticallyInvalid),
            (StaticallyInvalid, DynamicallyInvalid),
            (StaticallyInvalid, Valid),
            (StaticallyInvalid, CrashOnly),
            (DynamicallyInvalid, StaticallyInvalid),
            (DynamicallyInvalid, DynamicallyInvalid),
            (DynamicallyInvalid, Valid),
            (DynamicallyInvalid, CrashOnly),
        ];
        for from in ProgramStatus::ALL {
            for to in ProgramStatus::ALL {
                assert_eq!(
                    from.can_transition_to(to),
                    legal.contains(&(from, to)),
                    "{from} -> {to}"
                );
            }
        }
    }

    #[test]
    fn layout_matches_status() {
        assert_eq!(Raw.layout_dir().name(), "incoming");
        assert_eq!(StaticallyInvalid.layout_dir().name(), "work");
        assert_eq!(DynamicallyInvalid.layout_dir().name(), "work");
        assert_eq!(Valid.layout_dir().name(), "valid");
        assert_eq!(CrashOnly.layout_dir().name(), "crash_only");
    }

    #[test]
    fn language_from_extension() {
        assert_eq!(Language::from_path(Path::new("a.c")), Language::C);
        assert_eq!(Language::from_path(Path::new("a.cpp")), Language::Cpp);
        assert_eq!(Language::from_path(Path::new("noext")), Language::C);
    }

    #[test]
    fn id_is_sequence_plus_hash_prefix() {
        let id = ProgramId::new(7, "abcdef0123456789abcdef");
        assert_eq!(id.as_str(), "000007-abcdef012345");
    }
}
