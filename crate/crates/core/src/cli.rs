//! The `refuzz` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{Backend, Config};
use crate::corpus::{CorpusConfig, CorpusStore, Origin, ProgramStatus, StatusCounts, Transition};
use crate::coverage::{
    component_table, delta, parse_lcov_with_warnings, render_delta, ComponentMap,
};
use crate::generator::generate;
use crate::llm::{LanguageModel, MockBackend, ModelClient, OllamaBackend, RecordingBackend};
use crate::repair::{campaign_stats, Refuzzer, TRACES_DIR};
use crate::report::{render, summary_line, CampaignStats, Format};
use crate::validator::{self, CheckRequest, ClangValidator};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INCOMPLETE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const STATS_FILE: &str = "stats.json";

#[derive(Parser, Debug)]
#[command(
    name = "refuzz",
    version,
    about = "Validate, repair and quarantine generated C test programs"
)]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Extra `key=value` setting; repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Copy C/C++ files into the corpus as raw programs.
    Ingest {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value = "external")]
        origin: Origin,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Ask the model for new programs seeded by random keywords.
    Generate {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Keyword file, one keyword per line.
        #[arg(long, value_name = "FILE")]
        keywords: Option<PathBuf>,
        #[arg(long)]
        keywords_per_prompt: Option<usize>,
    },
    /// Classify raw programs without repairing them.
    Validate {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        toolchain: ToolchainArgs,
        #[arg(long, default_value = "text")]
        format: Format,
    },
    /// Validate and repair every unresolved program.
    Refuzz {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        toolchain: ToolchainArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Repair attempts per program.
        #[arg(long)]
        attempts: Option<u32>,
        /// Flag prompts longer than this many bytes in the trace.
        #[arg(long, value_name = "BYTES")]
        prompt_budget: Option<String>,
        #[arg(long, default_value = "text")]
        format: Format,
    },
    /// Per-component function coverage before and after repair.
    Coverage {
        #[arg(long, value_name = "LCOV")]
        before: PathBuf,
        #[arg(long, value_name = "LCOV")]
        after: PathBuf,
        /// Component map of `glob = component` lines.
        #[arg(long, value_name = "FILE")]
        map: Option<PathBuf>,
        #[arg(long, default_value = "text")]
        format: Format,
    },
    /// Campaign statistics from the stored traces.
    Stats {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value = "text")]
        format: Format,
    },
}

#[derive(Args, Debug)]
struct CorpusArgs {
    #[arg(long, value_name = "DIR")]
    corpus: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct ToolchainArgs {
    #[arg(long, value_name = "PATH")]
    compiler: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    opt_level: Option<String>,
    /// Per-run timeout in seconds.
    #[arg(long, value_name = "SECS")]
    timeout: Option<String>,
    /// Per-process memory limit, e.g. 16G.
    #[arg(long, value_name = "SIZE")]
    mem_limit: Option<String>,
    /// Comma-separated sanitizer profiles (address_undefined, memory, thread).
    #[arg(long)]
    profiles: Option<String>,
    #[arg(long, value_name = "DIR")]
    work_dir: Option<PathBuf>,
    /// Runs per sanitized binary; more than one also checks output stability.
    #[arg(long)]
    determinism_runs: Option<u32>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// `live` (HTTP server) or `mock` (cassette replay).
    #[arg(long)]
    backend: Option<String>,
    #[arg(long, value_name = "FILE")]
    cassette: Option<PathBuf>,
    /// Write every live exchange to this cassette.
    #[arg(long, value_name = "FILE")]
    record_cassette: Option<PathBuf>,
    #[arg(long, value_name = "URL")]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Runtime(_) => EXIT_INCOMPLETE,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Runs the tool and returns its exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("refuzz: {e}");
            e.code()
        }
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Layers defaults, the config file, `--set` pairs and then flags.
fn load_config(cli: &Cli) -> Result<Config, Failure> {
    let mut cfg = Config::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path).map_err(usage)?;
    }
    for pair in &cli.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{pair}`")))?;
        cfg.set(k.trim(), v, "--set").map_err(usage)?;
    }
    let mut flags: Vec<(&str, String)> = Vec::new();
    let corpus_flags = |c: &CorpusArgs, flags: &mut Vec<(&str, String)>| {
        if let Some(p) = &c.corpus {
            flags.push(("corpus.root", path_str(p)));
        }
        if let Some(w) = c.workers {
            flags.push(("workers", w.to_string()));
        }
    };
    let toolchain_flags = |t: &ToolchainArgs, flags: &mut Vec<(&str, String)>| {
        if let Some(p) = &t.compiler {
            flags.push(("toolchain.compiler", path_str(p)));
        }
        if let Some(v) = &t.opt_level {
            flags.push(("toolchain.opt_level", v.clone()));
            flags.push(("repair.opt_level_arg", v.clone()));
        }
        if let Some(v) = &t.timeout {
            flags.push(("toolchain.timeout_s", v.clone()));
        }
        if let Some(v) = &t.mem_limit {
            flags.push(("toolchain.memory_limit", v.clone()));
        }
        if let Some(v) = &t.profiles {
            flags.push(("toolchain.profiles", v.clone()));
        }
        if let Some(p) = &t.work_dir {
            flags.push(("toolchain.work_dir", path_str(p)));
        }
        if let Some(n) = t.determinism_runs {
            flags.push(("toolchain.determinism_runs", n.to_string()));
        }
    };
    let model_flags = |m: &ModelArgs, flags: &mut Vec<(&str, String)>| {
        if let Some(v) = &m.backend {
            flags.push(("model.backend", v.clone()));
        }
        if let Some(p) = &m.cassette {
            flags.push(("model.cassette", path_str(p)));
            if m.backend.is_none() {
                flags.push(("model.backend", "mock".into()));
            }
        }
        if let Some(p) = &m.record_cassette {
            flags.push(("model.record_cassette", path_str(p)));
        }
        if let Some(v) = &m.endpoint {
            flags.push(("model.endpoint", v.clone()));
        }
        if let Some(v) = &m.model {
            flags.push(("model.name", v.clone()));
        }
    };
    match &cli.command {
        Command::Ingest { corpus, .. } | Command::Stats { corpus, .. } => {
            corpus_flags(corpus, &mut flags)
        }
        Command::Generate {
            corpus,
            model,
            count,
            seed,
            keywords,
            keywords_per_prompt,
        } => {
            corpus_flags(corpus, &mut flags);
            model_flags(model, &mut flags);
            if let Some(n) = count {
                flags.push(("generator.count", n.to_string()));
            }
            if let Some(s) = seed {
                flags.push(("generator.seed", s.to_string()));
            }
            if let Some(p) = keywords {
                flags.push(("generator.keywords_file", path_str(p)));
            }
            if let Some(k) = keywords_per_prompt {
                flags.push(("generator.keywords_per_prompt", k.to_string()));
            }
        }
        Command::Validate {
            corpus, toolchain, ..
        } => {
            corpus_flags(corpus, &mut flags);
            toolchain_flags(toolchain, &mut flags);
        }
        Command::Refuzz {
            corpus,
            toolchain,
            model,
            attempts,
            prompt_budget,
            ..
        } => {
            corpus_flags(corpus, &mut flags);
            toolchain_flags(toolchain, &mut flags);
            model_flags(model, &mut flags);
            if let Some(n) = attempts {
                flags.push(("repair.max_attempts", n.to_string()));
            }
            if let Some(b) = prompt_budget {
                flags.push(("repair.prompt_budget_bytes", b.clone()));
            }
        }
        Command::Coverage { map, .. } => {
            if let Some(p) = map {
                flags.push(("coverage.map", path_str(p)));
            }
        }
    }
    for (key, value) in flags {
        let origin = format!("flag for {key}");
        cfg.set(key, &value, &origin).map_err(usage)?;
    }
    cfg.load_keywords().map_err(usage)?;
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<i32, Failure> {
    let cfg = load_config(&cli)?;
    if cli.print_config {
        print!("{}", cfg.render());
        return Ok(EXIT_OK);
    }
    match &cli.command {
        Command::Ingest { files, origin, .. } => ingest(&cfg, files, *origin),
        Command::Generate { .. } => run_generate(&cfg),
        Command::Validate { format, .. } => run_validate(&cfg, *format),
        Command::Refuzz { format, .. } => run_refuzz(&cfg, *format),
        Command::Coverage {
            before,
            after,
            format,
            ..
        } => run_coverage(&cfg, before, after, *format),
        Command::Stats { format, .. } => run_stats(&cfg, *format),
    }
}

fn open_store(cfg: &Config) -> Result<CorpusStore, Failure> {
    let store = CorpusStore::open_with(
        &cfg.corpus_root,
        CorpusConfig {
            max_attempts: cfg.repair.max_attempts,
            ..CorpusConfig::default()
        },
    )
    .map_err(runtime)?;
    let recovery = store.recovery();
    if recovery.torn_tail_dropped || recovery.files_moved > 0 || recovery.staged_removed > 0 {
        eprintln!(
            "recovered corpus: torn_tail_dropped={} files_moved={} staged_removed={}",
            recovery.torn_tail_dropped, recovery.files_moved, recovery.staged_removed
        );
    }
    Ok(store)
}

fn workers(cfg: &Config) -> usize {
    cfg.workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn model(cfg: &Config) -> Result<ModelClient, Failure> {
    let backend: Arc<dyn LanguageModel> = match cfg.backend {
        Backend::Mock => match &cfg.cassette {
            Some(path) => Arc::new(
                MockBackend::from_cassette(path)
                    .map_err(|e| usage(format!("cassette {}: {e}", path.display())))?,
            ),
            None => Arc::new(MockBackend::new(Vec::new())),
        },
        Backend::Live => {
            let live = OllamaBackend::new(cfg.model.clone());
            match &cfg.record_cassette {
                Some(path) => Arc::new(RecordingBackend::new(live, path.clone())),
                None => Arc::new(live),
            }
        }
    };
    Ok(ModelClient::new(backend, cfg.model.max_in_flight))
}

fn ingest(cfg: &Config, files: &[PathBuf], origin: Origin) -> Result<i32, Failure> {
    let store = open_store(cfg)?;
    let report = store.ingest(files, origin).map_err(runtime)?;
    for program in &report.programs {
        match &program.duplicate_of {
            Some(first) => println!("{} duplicate of {first}", program.id),
            None => println!("{}", program.id),
        }
    }
    for failure in &report.failures {
        eprintln!("skipped {failure}");
    }
    Ok(if report.failures.is_empty() {
        EXIT_OK
    } else {
        EXIT_INCOMPLETE
    })
}

fn run_generate(cfg: &Config) -> Result<i32, Failure> {
    cfg.generator.validate().map_err(usage)?;
    let store = open_store(cfg)?;
    let client = model(cfg)?;
    let report = generate(&cfg.generator, &client, &store).map_err(runtime)?;
    for program in &report.programs {
        println!("{}", program.id);
    }
    println!(
        "generated={} extraction_failures={} transport_errors={}",
        report.programs.len(),
        report.extraction_failures,
        report.transport_errors
    );
    Ok(if report.transport_errors == 0 {
        EXIT_OK
    } else {
        EXIT_INCOMPLETE
    })
}

#[derive(Debug, Serialize)]
struct ValidateSummary {
    validated: usize,
    valid: usize,
    statically_invalid: usize,
    dynamically_invalid: usize,
    tool_errors: usize,
}

fn run_validate(cfg: &Config, format: Format) -> Result<i32, Failure> {
    let store = open_store(cfg)?;
    let checker = ClangValidator::new(cfg.toolchain());
    let raw = store.with_status(ProgramStatus::Raw);
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..workers(cfg).min(raw.len()).max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(program) = raw.get(i) else { break };
                let result = store
                    .source_bytes(&program.id)
                    .map_err(|e| e.to_string())
                    .and_then(|source| {
                        let validation = validator::validate(
                            &checker,
                            &CheckRequest {
                                program_id: &program.id,
                                language: program.language,
                                source: &source,
                                round: 0,
                            },
                        );
                        let outcome = validation.deciding_outcome().id.clone();
                        match validation.status {
                            Ok(status) => store
                                .apply(&program.id, Transition::to(status).outcome(outcome))
                                .map(|p| p.status)
                                .map_err(|e| e.to_string()),
                            Err(failure) => Err(failure.to_string()),
                        }
                    });
                results
                    .lock()
                    .unwrap_or_else(|e| e.into_inner())
                    .push((program.id.clone(), result));
            });
        }
    });
    let mut results = results.into_inner().unwrap_or_else(|e| e.into_inner());
    results.sort_by(|a, b| a.0.cmp(&b.0));
    let mut counts = StatusCounts::default();
    let mut tool_errors = 0;
    for (id, result) in &results {
        match result {
            Ok(status) => match status {
                ProgramStatus::Valid => counts.valid += 1,
                ProgramStatus::StaticallyInvalid => counts.statically_invalid += 1,
                ProgramStatus::DynamicallyInvalid => counts.dynamically_invalid += 1,
                _ => {}
            },
            Err(e) => {
                tool_errors += 1;
                eprintln!("{id}: {e}");
            }
        }
    }
    let summary = ValidateSummary {
        validated: results.len(),
        valid: counts.valid,
        statically_invalid: counts.statically_invalid,
        dynamically_invalid: counts.dynamically_invalid,
        tool_errors,
    };
    match format {
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(&summary).expect("summary serializes")
        ),
        _ => println!(
            "validated={} valid={} statically_invalid={} dynamically_invalid={} tool_errors={}",
            summary.validated,
            summary.valid,
            summary.statically_invalid,
            summary.dynamically_invalid,
            summary.tool_errors
        ),
    }
    Ok(if tool_errors == 0 {
        EXIT_OK
    } else {
        EXIT_INCOMPLETE
    })
}

fn write_stats(root: &Path, stats: &CampaignStats) -> Result<(), Failure> {
    let path = root.join(STATS_FILE);
    let tmp = root.join(format!("{STATS_FILE}.tmp"));
    std::fs::write(&tmp, render(stats, Format::Json))
        .and_then(|_| std::fs::rename(&tmp, &path))
        .map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn run_refuzz(cfg: &Config, format: Format) -> Result<i32, Failure> {
    let store = open_store(cfg)?;
    let checker = ClangValidator::new(cfg.toolchain());
    let client = model(cfg)?;
    let refuzzer = Refuzzer::new(&store, &checker, &client, cfg.repair.clone()).map_err(usage)?;
    let workers = workers(cfg).min(cfg.model.max_in_flight);
    let report = refuzzer.refuzz_corpus(workers).map_err(runtime)?;
    for trace in report.aborted() {
        if let Some(abort) = &trace.abort {
            eprintln!("{}: unresolved: {}", trace.program_id, abort.detail);
        }
    }
    for (id, reason) in &report.failures {
        eprintln!("{id}: {reason}");
    }
    write_stats(store.root(), &report.stats)?;
    print!("{}", render(&report.stats, format));
    if format != Format::Json {
        println!("{}", summary_line(&report.stats));
    }
    let clean = report.stats.tool_errors == 0 && report.failures.is_empty();
    Ok(if clean { EXIT_OK } else { EXIT_INCOMPLETE })
}

fn run_stats(cfg: &Config, format: Format) -> Result<i32, Failure> {
    let store = open_store(cfg)?;
    let (stats, _) = campaign_stats(&store, &store.root().join(TRACES_DIR)).map_err(runtime)?;
    print!("{}", render(&stats, format));
    if format != Format::Json {
        println!("{}", summary_line(&stats));
    }
    Ok(EXIT_OK)
}

fn read_lcov(path: &Path) -> Result<crate::coverage::Tracefile, Failure> {
    let text =
        std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let (trace, warnings) = parse_lcov_with_warnings(&text);
    for w in warnings {
        eprintln!("{}:{}: {}", path.display(), w.line, w.message);
    }
    Ok(trace)
}

fn run_coverage(cfg: &Config, before: &Path, after: &Path, format: Format) -> Result<i32, Failure> {
    let map = match &cfg.coverage_map {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?;
            ComponentMap::parse(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => ComponentMap::llvm_default(),
    };
    let before = component_table(&read_lcov(before)?, &map);
    let after = component_table(&read_lcov(after)?, &map);
    print!("{}", render_delta(&delta(&before, &after), format));
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("refuzz").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_file_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("refuzz.conf");
        std::fs::write(
            &file,
            "toolchain.timeout_s = 5\ntoolchain.memory_limit = 1G\nworkers = 7\n",
        )
        .unwrap();
        let file_arg = file.to_str().unwrap();
        let cli = parse(&[
            "--config",
            file_arg,
            "refuzz",
            "--corpus",
            "c1",
            "--attempts",
            "2",
            "--opt-level",
            "-O0",
            "--timeout",
            "60",
            "--mem-limit",
            "16G",
        ]);
        let cfg = load_config(&cli).unwrap();
        assert_eq!(cfg.toolchain.timeout.as_secs(), 60);
        assert_eq!(cfg.toolchain.memory_limit_bytes, 16 << 30);
        assert_eq!(cfg.workers, Some(7));
        assert_eq!(cfg.repair.max_attempts, 2);
        assert_eq!(cfg.toolchain.opt_level, "-O0");
        assert_eq!(cfg.corpus_root, PathBuf::from("c1"));
        assert_eq!(cfg.effective_work_dir(), PathBuf::from("c1/work"));
    }

    #[test]
    fn cassette_implies_mock_backend() {
        let cli = parse(&["refuzz", "--cassette", "x.json"]);
        assert_eq!(load_config(&cli).unwrap().backend, Backend::Mock);
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let cli = parse(&["validate", "--timeout", "soon"]);
        assert!(matches!(load_config(&cli), Err(Failure::Usage(_))));
        assert_eq!(run(["refuzz", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["refuzz", "stats", "--nope"]), EXIT_USAGE);
    }
}
