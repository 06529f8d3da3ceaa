mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::fixtures;
use regex::Regex;

fn refuzz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refuzz"))
        .args(args)
        .env_remove(refuzz::llm::ENDPOINT_ENV)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_works_for_every_subcommand() {
    assert_eq!(refuzz(&["--help"]).status.code(), Some(0));
    for sub in [
        "ingest", "generate", "validate", "refuzz", "coverage", "stats",
    ] {
        let out = refuzz(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(stdout(&out).contains("Usage"), "{sub}");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(refuzz(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(refuzz(&["stats", "--bogus"]).status.code(), Some(2));
    assert_eq!(
        refuzz(&["validate", "--opt-level", "-O9"]).status.code(),
        Some(2)
    );
    assert_eq!(
        refuzz(&["stats", "--set", "no.such.key=1"]).status.code(),
        Some(2)
    );
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.info");
    assert_eq!(
        refuzz(&["coverage", "--before", s(&missing), "--after", s(&missing)])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn validate_on_an_empty_corpus_reports_zero() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c");
    let out = refuzz(&["validate", "--corpus", s(&corpus)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        stdout(&out).trim(),
        "validated=0 valid=0 statically_invalid=0 dynamically_invalid=0 tool_errors=0"
    );
}

#[test]
fn print_config_reflects_flags_and_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let out = refuzz(&[
        "--print-config",
        "refuzz",
        "--timeout",
        "7",
        "--cassette",
        "x.json",
        "--workers",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("toolchain.timeout_s = 7"), "{text}");
    assert!(text.contains("model.backend = mock"), "{text}");
    assert!(text.contains("workers = 3"), "{text}");
    let file = dir.path().join("refuzz.conf");
    std::fs::write(&file, &text).unwrap();
    let again = refuzz(&["--config", s(&file), "--print-config", "stats"]);
    assert_eq!(stdout(&again), text);
}

#[test]
fn coverage_renders_a_delta_table() {
    let dir = fixtures().join("coverage");
    let before = dir.join("before.info");
    let after = dir.join("after.info");
    let out = refuzz(&[
        "coverage",
        "--before",
        s(&before),
        "--after",
        s(&after),
        "--format",
        "md",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(
        text.contains("| Inlining | 12.5 | 50.0 | +37.5 |"),
        "{text}"
    );
    assert!(
        text.contains("| Vectorization | 5.0 | 15.0 | +10.0 |"),
        "{text}"
    );
    assert!(
        text.contains("| Backend Code Gen. | 25.0 | 25.0 | 0.0 |"),
        "{text}"
    );

    let json = refuzz(&[
        "coverage",
        "--before",
        s(&before),
        "--after",
        s(&after),
        "--format",
        "json",
    ]);
    let rows: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert!(rows.to_string().contains("Frontend (Parser)"));
}

const SMALL_CAMPAIGN: [&str; 4] = ["v1_sum.c", "r1_semicolon.c", "r4_divzero.c", "u3_prose.c"];

struct Run {
    stats: serde_json::Value,
    prompts: Vec<(String, String)>,
}

fn campaign(root: &Path) -> Run {
    let corpus = root.join("corpus");
    let programs = fixtures().join("campaign/programs");
    let files: Vec<PathBuf> = SMALL_CAMPAIGN.iter().map(|f| programs.join(f)).collect();
    let mut args = vec!["ingest", "--corpus", s(&corpus)];
    args.extend(files.iter().map(|f| s(f)));
    assert_eq!(refuzz(&args).status.code(), Some(0));

    let cassette = fixtures().join("campaign/cassette.json");
    let out = refuzz(&[
        "refuzz",
        "--corpus",
        s(&corpus),
        "--cassette",
        s(&cassette),
        "--workers",
        "2",
        "--timeout",
        "10",
        "--mem-limit",
        "2G",
        "--format",
        "json",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mut stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let stored: serde_json::Value =
        serde_json::from_slice(&std::fs::read(corpus.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stored, stats);
    stats
        .as_object_mut()
        .unwrap()
        .remove("mean_time_per_test_s");

    let volatile = Regex::new(r"==\d+==|0x[0-9a-f]+|\bT\d+\b").unwrap();
    let mut prompts = Vec::new();
    for program in std::fs::read_dir(corpus.join("traces")).unwrap() {
        let program = program.unwrap().path();
        for attempt in std::fs::read_dir(&program).unwrap() {
            let attempt = attempt.unwrap().path();
            let prompt = attempt.join("prompt.txt");
            if prompt.exists() {
                let text = std::fs::read_to_string(prompt).unwrap();
                let key = format!(
                    "{}/{}",
                    program.file_name().unwrap().to_string_lossy(),
                    attempt.file_name().unwrap().to_string_lossy()
                );
                prompts.push((key, volatile.replace_all(&text, "_").into_owned()));
            }
        }
    }
    prompts.sort();
    Run { stats, prompts }
}

#[test]
fn mock_campaign_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = campaign(a.path());
    let second = campaign(b.path());
    assert_eq!(first.stats["total_tests"], 4);
    assert_eq!(first.stats["valid_before"], 1);
    assert_eq!(first.stats["valid_after"], 3);
    assert_eq!(first.stats["crash_only"], 1);
    assert_eq!(first.stats, second.stats);
    assert!(!first.prompts.is_empty());
    assert_eq!(first.prompts, second.prompts);

    let corpus = a.path().join("corpus");
    let out = refuzz(&["stats", "--corpus", s(&corpus), "--format", "json"]);
    let mut stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    stats
        .as_object_mut()
        .unwrap()
        .remove("mean_time_per_test_s");
    assert_eq!(stats, first.stats);
}
