use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
pub const DEFAULT_MEMORY_LIMIT: u64 = 16 * 1024 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    AddressUndefined,
    Memory,
    Thread,
}

impl ProfileName {
    pub fn as_str(self) -> &'static str {
        match self {
            ProfileName::AddressUndefined => "address_undefined",
            ProfileName::Memory => "memory",
            ProfileName::Thread => "thread",
        }
    }
}

impl fmt::Display for ProfileName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProfileName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "address_undefined" | "asan" | "address" => Ok(ProfileName::AddressUndefined),
            "memory" | "msan" => Ok(ProfileName::Memory),
            "thread" | "tsan" => Ok(ProfileName::Thread),
            other => Err(format!("unknown sanitizer profile `{other}`")),
        }
    }
}

/// One instrumented build-and-run configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanitizerProfile {
    pub name: ProfileName,
    pub compile_flags: Vec<String>,
    pub runtime_env: Vec<String>,
}

impl SanitizerProfile {
    pub fn address_undefined() -> Self {
        SanitizerProfile {
            name: ProfileName::AddressUndefined,
            compile_flags: strings(&[
                "-fsanitize=address,undefined",
                "-fno-omit-frame-pointer",
                "-g",
            ]),
            runtime_env: strings(&[
                "ASAN_OPTIONS=detect_leaks=0:abort_on_error=0",
                "UBSAN_OPTIONS=print_stacktrace=1:halt_on_error=1",
            ]),
        }
    }

    pub fn memory() -> Self {
        SanitizerProfile {
            name: ProfileName::Memory,
            compile_flags: strings(&["-fsanitize=memory", "-fno-omit-frame-pointer", "-g"]),
            runtime_env: strings(&["MSAN_OPTIONS=abort_on_error=0"]),
        }
    }

    pub fn thread() -> Self {
        SanitizerProfile {
            name: ProfileName::Thread,
            compile_flags: strings(&["-fsanitize=thread", "-g"]),
            runtime_env: strings(&["TSAN_OPTIONS=halt_on_error=1"]),
        }
    }

    pub fn builtin(name: ProfileName) -> Self {
        match name {
            ProfileName::AddressUndefined => Self::address_undefined(),
            ProfileName::Memory => Self::memory(),
            ProfileName::Thread => Self::thread(),
        }
    }

    /// Requested `-fsanitize=` checks across all flags.
    fn sanitizers(&self) -> Vec<String> {
        self.compile_flags
            .iter()
            .filter_map(|f| f.strip_prefix("-fsanitize="))
            .flat_map(|list| list.split(','))
            .map(str::to_string)
            .collect()
    }

    pub fn env_pairs(&self) -> Vec<(String, String)> {
        self.runtime_env
            .iter()
            .filter_map(|kv| kv.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolchainConfig {
    pub compiler_path: PathBuf,
    pub cxx_compiler_path: PathBuf,
    pub base_flags: Vec<String>,
    pub opt_level: String,
    pub sanitizer_profiles: Vec<SanitizerProfile>,
    #[serde(with = "secs")]
    pub timeout: Duration,
    pub memory_limit_bytes: u64,
    pub work_dir: PathBuf,
    /// Runs per profile; more than one also compares stdout and exit codes.
    pub determinism_runs: u32,
}

impl Default for ToolchainConfig {
    fn default() -> Self {
        ToolchainConfig {
            compiler_path: PathBuf::from("clang"),
            cxx_compiler_path: PathBuf::from("clang++"),
            // Implicit declarations are hard errors in current C and in
            // newer Clang releases; older Clang only warns.
            base_flags: strings(&[
                "-Werror=implicit-function-declaration",
                "-Werror=implicit-int",
            ]),
            opt_level: "-O0".to_string(),
            sanitizer_profiles: vec![
                SanitizerProfile::address_undefined(),
                SanitizerProfile::memory(),
            ],
            timeout: DEFAULT_TIMEOUT,
            memory_limit_bytes: DEFAULT_MEMORY_LIMIT,
            work_dir: std::env::temp_dir().join("refuzz-work"),
            determinism_runs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ToolchainError {
    #[error("timeout must be positive")]
    ZeroTimeout,
    #[error("memory limit must be positive")]
    ZeroMemoryLimit,
    #[error("optimisation level `{0}` does not match -O[0123sz]")]
    BadOptLevel(String),
    #[error("profile {0} combines address and memory instrumentation")]
    IncompatibleSanitizers(ProfileName),
    #[error("determinism runs must be at least 1")]
    ZeroRuns,
}

fn opt_level_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^-O[0123sz]$").unwrap())
}

pub fn is_valid_opt_level(level: &str) -> bool {
    opt_level_re().is_match(level)
}

impl ToolchainConfig {
    pub fn validate(&self) -> Result<(), ToolchainError> {
        if self.timeout.is_zero() {
            return Err(ToolchainError::ZeroTimeout);
        }
        if self.memory_limit_bytes == 0 {
            return Err(ToolchainError::ZeroMemoryLimit);
        }
        if !is_valid_opt_level(&self.opt_level) {
            return Err(ToolchainError::BadOptLevel(self.opt_level.clone()));
        }
        if self.determinism_runs == 0 {
            return Err(ToolchainError::ZeroRuns);
        }
        for profile in &self.sanitizer_profiles {
            let checks = profile.sanitizers();
            if checks.iter().any(|c| c == "address") && checks.iter().any(|c| c == "memory") {
                return Err(ToolchainError::IncompatibleSanitizers(profile.name));
            }
        }
        Ok(())
    }

    pub fn memory_limit_mb(&self) -> u64 {
        (self.memory_limit_bytes / (1024 * 1024)).max(1)
    }
}

/// Parses sizes like `16G`, `64M`, `512k` or plain byte counts (binary units).
pub fn parse_byte_size(text: &str) -> Option<u64> {
    let text = text.trim();
    let split = text
        .find(|c: char| !c.is_ascii_digit())
        .unwrap_or(text.len());
    let (digits, suffix) = text.split_at(split);
    let value: u64 = digits.parse().ok()?;
    let scale: u64 = match suffix.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kb" | "kib" => 1 << 10,
        "m" | "mb" | "mib" => 1 << 20,
        "g" | "gb" | "gib" => 1 << 30,
        "t" | "tb" | "tib" => 1 << 40,
        _ => return None,
    };
    value.checked_mul(scale)
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}
