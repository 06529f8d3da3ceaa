mod common;

use std::path::PathBuf;

use common::{COMPILER_LOGS, SANITIZER_LOGS};
use refuzz::diagnostics::{parse_compiler_log, parse_sanitizer_log, Diagnostic};

fn logs_dir() -> PathBuf {
    common::fixtures().join("logs")
}

/// Set REFUZZ_BLESS=1 to rewrite the expected files from the current parser.
fn check(name: &str, parse: fn(&str) -> Vec<Diagnostic>) {
    let dir = logs_dir();
    let log = std::fs::read_to_string(dir.join(format!("{name}.log"))).unwrap();
    let actual = parse(&log);
    let expected_path = dir.join(format!("{name}.expected.json"));
    if std::env::var_os("REFUZZ_BLESS").is_some() {
        let mut json = serde_json::to_string_pretty(&actual).unwrap();
        json.push('\n');
        std::fs::write(&expected_path, json).unwrap();
        return;
    }
    let expected: Vec<Diagnostic> =
        serde_json::from_str(&std::fs::read_to_string(&expected_path).unwrap()).unwrap();
    assert_eq!(actual, expected, "{name}");
}

#[test]
fn compiler_logs_match_golden_structures() {
    for name in COMPILER_LOGS {
        check(name, |t| parse_compiler_log(t).diagnostics);
    }
}

#[test]
fn sanitizer_logs_match_golden_structures() {
    for name in SANITIZER_LOGS {
        check(name, |t| parse_sanitizer_log(t).diagnostics);
    }
}

#[test]
fn golden_kinds_and_locations() {
    let kind = |name: &str, compiler: bool| {
        let log = std::fs::read_to_string(logs_dir().join(format!("{name}.log"))).unwrap();
        let parsed = if compiler {
            parse_compiler_log(&log)
        } else {
            parse_sanitizer_log(&log)
        };
        let d = parsed.diagnostics.into_iter().next().unwrap();
        (d.kind, d.line)
    };
    assert_eq!(
        kind("undeclared_identifier", true),
        ("undeclared-identifier".into(), Some(2))
    );
    assert_eq!(
        kind("stack_buffer_overflow", false).0,
        "stack-buffer-overflow"
    );
    assert_eq!(kind("heap_use_after_free", false).0, "heap-use-after-free");
    assert_eq!(kind("double_free", false).0, "double-free");
    assert_eq!(
        kind("division_by_zero", false),
        ("division by zero".into(), Some(3))
    );
    assert_eq!(
        kind("uninitialized_value", false).0,
        "use-of-uninitialized-value"
    );
    assert_eq!(
        kind("undefined_reference", true),
        ("undefined-reference".into(), None)
    );
    assert_eq!(
        kind("index_out_of_bounds", false),
        ("index out of bounds".into(), Some(4))
    );
}
