//! Flat `section.key = value` configuration with layered overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::generator::{parse_keywords, GenSpec};
use crate::llm::{ModelConfig, ENDPOINT_ENV};
use crate::repair::RepairPolicy;
use crate::validator::{
    is_valid_opt_level, parse_byte_size, ProfileName, SanitizerProfile, ToolchainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Live,
    Mock,
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" | "ollama" => Ok(Backend::Live),
            "mock" => Ok(Backend::Mock),
            other => Err(format!("unknown backend `{other}` (live, mock)")),
        }
    }
}

impl Backend {
    fn as_str(self) -> &'static str {
        match self {
            Backend::Live => "live",
            Backend::Mock => "mock",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub corpus_root: PathBuf,
    pub workers: Option<usize>,
    pub toolchain: ToolchainConfig,
    /// Scratch directory; defaults to `<corpus>/work`.
    pub work_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub backend: Backend,
    pub cassette: Option<PathBuf>,
    pub record_cassette: Option<PathBuf>,
    pub repair: RepairPolicy,
    pub generator: GenSpec,
    pub keywords_file: Option<PathBuf>,
    pub coverage_map: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            corpus_root: PathBuf::from("corpus"),
            workers: None,
            toolchain: ToolchainConfig::default(),
            work_dir: None,
            model: ModelConfig::from_env(),
            backend: Backend::Live,
            cassette: None,
            record_cassette: None,
            repair: RepairPolicy::default(),
            generator: GenSpec::default(),
            keywords_file: None,
            coverage_map: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{origin}: unknown key `{key}`")]
    UnknownKey { origin: String, key: String },
    #[error("{origin}: bad value `{value}` for `{key}`: {reason}")]
    BadValue {
        origin: String,
        key: String,
        value: String,
        reason: String,
    },
    #[error("{origin}: expected `key = value`")]
    Syntax { origin: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn parse<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| e.to_string())
}

fn seconds(value: &str) -> Result<Duration, String> {
    let secs: f64 = parse(value)?;
    Duration::try_from_secs_f64(secs).map_err(|e| e.to_string())
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn list(value: &str) -> Vec<String> {
    value.split_whitespace().map(str::to_string).collect()
}

impl Config {
    /// Applies one setting. `origin` names where it came from, for errors.
    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        let bad = |reason: String| ConfigError::BadValue {
            origin: origin.to_string(),
            key: key.to_string(),
            value: value.to_string(),
            reason,
        };
        let tc = &mut self.toolchain;
        match key {
            "corpus.root" => self.corpus_root = PathBuf::from(value),
            "workers" => {
                self.workers = match value {
                    "" | "auto" => None,
                    v => Some(parse(v).map_err(bad)?),
                }
            }
            "toolchain.compiler" => tc.compiler_path = PathBuf::from(value),
            "toolchain.cxx_compiler" => tc.cxx_compiler_path = PathBuf::from(value),
            "toolchain.base_flags" => tc.base_flags = list(value),
            "toolchain.opt_level" => {
                if !is_valid_opt_level(value) {
                    return Err(bad("expected -O0, -O1, -O2, -O3, -Os or -Oz".into()));
                }
                tc.opt_level = value.to_string();
            }
            "toolchain.profiles" => {
                tc.sanitizer_profiles = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<ProfileName>().map(SanitizerProfile::builtin))
                    .collect::<Result<_, _>>()
                    .map_err(bad)?;
            }
            "toolchain.timeout_s" => tc.timeout = seconds(value).map_err(bad)?,
            "toolchain.memory_limit" => {
                tc.memory_limit_bytes =
                    parse_byte_size(value).ok_or_else(|| bad("expected a size like 16G".into()))?
            }
            "toolchain.work_dir" => self.work_dir = optional_path(value),
            "toolchain.determinism_runs" => tc.determinism_runs = parse(value).map_err(bad)?,
            "model.backend" => self.backend = parse(value).map_err(bad)?,
            "model.endpoint" => self.model.endpoint = value.to_string(),
            "model.name" => self.model.model_name = value.to_string(),
            "model.temperature" => self.model.temperature = parse(value).map_err(bad)?,
            "model.max_response_bytes" => {
                self.model.max_response_bytes = parse_byte_size(value)
                    .and_then(|b| usize::try_from(b).ok())
                    .ok_or_else(|| bad("expected a size".into()))?
            }
            "model.request_timeout_s" => {
                self.model.request_timeout = seconds(value).map_err(bad)?
            }
            "model.transport_retries" => {
                self.model.transport_retries = parse(value).map_err(bad)?
            }
            "model.max_in_flight" => self.model.max_in_flight = parse(value).map_err(bad)?,
            "model.cassette" => self.cassette = optional_path(value),
            "model.record_cassette" => self.record_cassette = optional_path(value),
            "repair.max_attempts" => self.repair.max_attempts = parse(value).map_err(bad)?,
            "repair.opt_level_arg" => self.repair.opt_level_arg = value.to_string(),
            "repair.prompt_budget_bytes" => {
                self.repair.prompt_budget_bytes = match value {
                    "" | "none" => None,
                    v => Some(
                        parse_byte_size(v)
                            .and_then(|b| usize::try_from(b).ok())
                            .ok_or_else(|| bad("expected a size".into()))?,
                    ),
                }
            }
            "generator.keywords_file" => self.keywords_file = optional_path(value),
            "generator.keywords_per_prompt" => {
                self.generator.keywords_per_prompt = parse(value).map_err(bad)?
            }
            "generator.count" => self.generator.count = parse(value).map_err(bad)?,
            "generator.seed" => self.generator.seed = parse(value).map_err(bad)?,
            "coverage.map" => self.coverage_map = optional_path(value),
            _ => {
                return Err(ConfigError::UnknownKey {
                    origin: origin.to_string(),
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, name: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let origin = format!("{name}:{}", i + 1);
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax {
                origin: origin.clone(),
            })?;
            self.set(key.trim(), value, &origin)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Loads the keyword file, if one is configured, into the generator spec.
    pub fn load_keywords(&mut self) -> Result<(), ConfigError> {
        if let Some(path) = &self.keywords_file {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.clone(),
                source,
            })?;
            self.generator.keyword_pool = parse_keywords(&text);
        }
        Ok(())
    }

    pub fn effective_work_dir(&self) -> PathBuf {
        self.work_dir
            .clone()
            .unwrap_or_else(|| self.corpus_root.join("work"))
    }

    /// Toolchain settings with the scratch directory resolved.
    pub fn toolchain(&self) -> ToolchainConfig {
        ToolchainConfig {
            work_dir: self.effective_work_dir(),
            ..self.toolchain.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.toolchain.validate().map_err(|e| invalid(&e))?;
        self.model.validate().map_err(|e| invalid(&e))?;
        if self.repair.max_attempts == 0 {
            return Err(ConfigError::Invalid(
                "repair.max_attempts must be at least 1".into(),
            ));
        }
        if self.workers == Some(0) {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        Ok(())
    }

    /// Every setting as `key = value` lines, in the file format.
    pub fn render(&self) -> String {
        let tc = &self.toolchain;
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let entries: Vec<(&str, String)> = vec![
            ("corpus.root", self.corpus_root.display().to_string()),
            (
                "workers",
                self.workers
                    .map(|w| w.to_string())
                    .unwrap_or_else(|| "auto".into()),
            ),
            ("toolchain.compiler", tc.compiler_path.display().to_string()),
            (
                "toolchain.cxx_compiler",
                tc.cxx_compiler_path.display().to_string(),
            ),
            ("toolchain.base_flags", tc.base_flags.join(" ")),
            ("toolchain.opt_level", tc.opt_level.clone()),
            (
                "toolchain.profiles",
                tc.sanitizer_profiles
                    .iter()
                    .map(|p| p.name.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("toolchain.timeout_s", tc.timeout.as_secs_f64().to_string()),
            ("toolchain.memory_limit", tc.memory_limit_bytes.to_string()),
            (
                "toolchain.work_dir",
                self.effective_work_dir().display().to_string(),
            ),
            (
                "toolchain.determinism_runs",
                tc.determinism_runs.to_string(),
            ),
            ("model.backend", self.backend.as_str().to_string()),
            ("model.endpoint", self.model.endpoint.clone()),
            ("model.name", self.model.model_name.clone()),
            ("model.temperature", self.model.temperature.to_string()),
            (
                "model.max_response_bytes",
                self.model.max_response_bytes.to_string(),
            ),
            (
                "model.request_timeout_s",
                self.model.request_timeout.as_secs_f64().to_string(),
            ),
            (
                "model.transport_retries",
                self.model.transport_retries.to_string(),
            ),
            ("model.max_in_flight", self.model.max_in_flight.to_string()),
            ("model.cassette", path(&self.cassette)),
            ("model.record_cassette", path(&self.record_cassette)),
            ("repair.max_attempts", self.repair.max_attempts.to_string()),
            ("repair.opt_level_arg", self.repair.opt_level_arg.clone()),
            (
                "repair.prompt_budget_bytes",
                self.repair
                    .prompt_budget_bytes
                    .map(|b| b.to_string())
                    .unwrap_or_else(|| "none".into()),
            ),
            ("generator.keywords_file", path(&self.keywords_file)),
            (
                "generator.keywords_per_prompt",
                self.generator.keywords_per_prompt.to_string(),
            ),
            ("generator.count", self.generator.count.to_string()),
            ("generator.seed", self.generator.seed.to_string()),
            ("coverage.map", path(&self.coverage_map)),
        ];
        let mut out = format!(
            "# effective configuration ({ENDPOINT_ENV} overrides model.endpoint defaults)\n"
        );
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
