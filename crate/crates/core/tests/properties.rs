mod common;

use std::collections::HashMap;

use common::{
    program_text, quarantine_violation, MarkerChecker, Reply, ScriptedModel, DYNAMIC_BAD,
    STATIC_BAD,
};
use proptest::prelude::*;
use refuzz::corpus::{replay, CorpusStore, Language, Origin, ProgramStatus, Transition};
use refuzz::coverage::{
    component_table, delta, parse_lcov, render_lcov, ComponentMap, ComponentRow, CoverageTable,
    FileCoverage, FunctionCoverage, Tracefile,
};
use refuzz::diagnostics::{parse_compiler_log, parse_sanitizer_log, parse_sanitizer_log_capped};
use refuzz::llm::extract_code;
use refuzz::percent::Percent;
use refuzz::repair::{Refuzzer, RepairPolicy, RepairTrace};
use refuzz::report::{compute_stats, render, CampaignStats, Format};
use refuzz::validator::{self, CheckRequest};

fn reply() -> impl Strategy<Value = Reply> {
    prop_oneof![
        3 => Just(Reply::Fixed),
        2 => Just(Reply::StillStatic),
        2 => Just(Reply::StillDynamic),
        2 => Just(Reply::Prose),
        1 => Just(Reply::Transport),
    ]
}

fn marker() -> impl Strategy<Value = &'static str> {
    prop_oneof![Just("ok"), Just(STATIC_BAD), Just(DYNAMIC_BAD)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn campaigns_respect_the_attempt_bound(
        programs in prop::collection::vec((marker(), prop::collection::vec(reply(), 0..4)), 1..6),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let store = CorpusStore::open(dir.path()).unwrap();
        let mut scripts = HashMap::new();
        for (i, (marker, replies)) in programs.iter().enumerate() {
            let tag = format!("p{i}");
            store.ingest_bytes(program_text(&tag, marker).as_bytes(), Language::C, Origin::External).unwrap();
            scripts.insert(tag, replies.clone());
        }
        let model = ScriptedModel::new(scripts);
        let policy = RepairPolicy::default();
        let refuzzer = Refuzzer::new(&store, &MarkerChecker, &model, policy.clone()).unwrap();
        let report = refuzzer.refuzz_corpus(2).unwrap();
        prop_assert!(report.failures.is_empty());
        for trace in &report.traces {
            prop_assert!(trace.attempts.len() as u32 <= policy.max_attempts);
            let program = store.get(&trace.program_id).unwrap();
            prop_assert_eq!(program.repair_attempts as usize, trace.attempts.len());
            if let Some(problem) = quarantine_violation(trace) {
                return Err(TestCaseError::fail(problem));
            }
            if trace.final_status == ProgramStatus::Valid {
                let source = store.source_bytes(&trace.program_id).unwrap();
                let again = validator::validate(&MarkerChecker, &CheckRequest {
                    program_id: &trace.program_id,
                    language: Language::C,
                    source: &source,
                    round: 99,
                });
                prop_assert_eq!(again.status, Ok(ProgramStatus::Valid));
            }
        }
        let counts = store.counts();
        prop_assert_eq!(counts.total() as u64, store.ingested());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn diagnostics_parsers_are_total_and_deterministic(text in "(?s).{0,400}") {
        let a = parse_compiler_log(&text);
        prop_assert_eq!(&a, &parse_compiler_log(&text));
        prop_assert_eq!(&a.verbatim, &text);
        let b = parse_sanitizer_log(&text);
        prop_assert_eq!(&b, &parse_sanitizer_log(&text));
    }

    #[test]
    fn sanitizer_cap_keeps_a_prefix(text in "(?s).{0,300}", cap in 0usize..200) {
        let log = parse_sanitizer_log_capped(&text, cap);
        prop_assert!(log.verbatim.len() <= cap);
        prop_assert!(text.starts_with(&log.verbatim));
        prop_assert_eq!(log.truncated, log.verbatim.len() < text.len());
    }

    #[test]
    fn fenced_code_round_trips(
        lines in prop::collection::vec("[a-z0-9 (){};=+*/<>#_.,\"']{0,40}", 0..12),
        info in prop_oneof![Just(""), Just("c"), Just("C"), Just("cpp")],
        prose in "[A-Za-z .,]{0,60}",
    ) {
        let code = lines.join("\n");
        let reply = format!("{prose}\n```{info}\n{code}\n```\n{prose}");
        prop_assert_eq!(extract_code(&reply), Some(code));
    }

    #[test]
    fn lcov_render_parse_round_trip(trace in tracefile()) {
        let text = render_lcov(&trace);
        let parsed = parse_lcov(&text);
        prop_assert_eq!(&parsed, &trace);
        prop_assert_eq!(render_lcov(&parsed), text);
    }

    #[test]
    fn component_aggregation_conserves_functions(trace in tracefile()) {
        let table = component_table(&trace, &ComponentMap::llvm_default());
        prop_assert_eq!(table.functions_found(), trace.functions_found());
        let hit: u64 = table.rows.iter().map(|r| r.functions_hit).sum();
        prop_assert_eq!(hit, trace.functions_hit());
    }

    #[test]
    fn delta_is_antisymmetric(pairs in prop::collection::vec((0i64..=1000, 0i64..=1000), 1..10)) {
        let table = |pick: fn(&(i64, i64)) -> i64| CoverageTable {
            rows: pairs
                .iter()
                .enumerate()
                .map(|(i, p)| ComponentRow::from_percent(format!("c{i}"), Percent::from_tenths(pick(p))))
                .collect(),
        };
        let (b, a) = (table(|p| p.0), table(|p| p.1));
        let forward = delta(&b, &a);
        let backward = delta(&a, &b);
        for (f, r) in forward.rows.iter().zip(&backward.rows) {
            prop_assert_eq!(f.delta.map(|d| -d), r.delta);
            prop_assert_eq!(f.delta.unwrap().tenths(), f.after.unwrap().tenths() - f.before.unwrap().tenths());
        }
    }

    #[test]
    fn percent_matches_float_rounding(part in 0u64..100_000, extra in 0u64..100_000) {
        let whole = part + extra;
        match Percent::from_ratio(part, whole) {
            None => prop_assert_eq!(whole, 0),
            Some(p) => {
                let exact = part as f64 * 100.0 / whole as f64;
                prop_assert!((p.as_f64() - exact).abs() <= 0.05 + 1e-9);
            }
        }
    }

    #[test]
    fn one_more_valid_never_lowers_the_rate(valid in 0u64..500, invalid in 0u64..500, pre in 0u64..50) {
        let traces = |v: u64| -> Vec<RepairTrace> {
            (0..v).map(|_| trace(ProgramStatus::Valid))
                .chain((0..invalid).map(|_| trace(ProgramStatus::CrashOnly)))
                .collect()
        };
        let total = valid + invalid + pre + 1;
        let base = compute_stats(&traces(valid), pre, total).unwrap();
        let more = compute_stats(&traces(valid + 1), pre, total).unwrap();
        prop_assert!(more.rate_after >= base.rate_after);
        prop_assert_eq!(base.valid_after + base.crash_only + base.tool_errors, total);
    }

    #[test]
    fn stats_json_round_trips(vb in 0u64..1000, gain in 0u64..1000, crash in 0u64..1000, rest in 0u64..1000, t in prop::option::of(0.0f64..100.0)) {
        let va = vb + gain;
        let stats = CampaignStats::from_counts(vb, va, crash, va + crash + rest, t).unwrap();
        let back: CampaignStats = serde_json::from_str(&render(&stats, Format::Json)).unwrap();
        prop_assert_eq!(back, stats);
    }
}

fn trace(final_status: ProgramStatus) -> RepairTrace {
    RepairTrace {
        program_id: common::id("x"),
        initial_status: ProgramStatus::Raw,
        attempts: Vec::new(),
        final_status,
        total_time_ms: 0,
        abort: None,
    }
}

fn tracefile() -> impl Strategy<Value = Tracefile> {
    let dirs = prop_oneof![
        Just("llvm/lib/Transforms/Vectorize"),
        Just("llvm/lib/Transforms/IPO"),
        Just("clang/lib/Sema"),
        Just("llvm/lib/CodeGen"),
        Just("other/place"),
    ];
    let file = (
        dirs,
        "[a-z]{1,8}",
        prop::collection::btree_map("[a-z_]{1,10}", (1u32..500, 0u64..5), 0..6),
    );
    prop::collection::btree_map("[0-9]{1,3}", file, 0..6).prop_map(|files| Tracefile {
        records: files
            .into_iter()
            .map(|(n, (dir, stem, fns))| {
                let functions: std::collections::BTreeMap<String, FunctionCoverage> = fns
                    .into_iter()
                    .map(|(name, (line, hits))| {
                        (
                            name,
                            FunctionCoverage {
                                line: Some(line),
                                end_line: None,
                                hits,
                            },
                        )
                    })
                    .collect();
                FileCoverage {
                    source_path: format!("/src/{dir}/{stem}{n}.cpp"),
                    functions_found: functions.len() as u64,
                    functions_hit: functions.values().filter(|f| f.hits > 0).count() as u64,
                    functions,
                }
            })
            .collect(),
    })
}

#[derive(Debug, Clone)]
enum JournalOp {
    Ingest(u8),
    Advance(usize, u8),
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn journal_replay_rebuilds_the_index(
        ops in prop::collection::vec(
            prop_oneof![
                (0u8..4).prop_map(JournalOp::Ingest),
                (0usize..16, 0u8..5).prop_map(|(i, s)| JournalOp::Advance(i, s)),
            ],
            1..30,
        ),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let index = {
            let store = CorpusStore::open(dir.path()).unwrap();
            for op in &ops {
                match op {
                    JournalOp::Ingest(n) => {
                        let text = format!("int main(void){{return {n};}}\n");
                        store.ingest_bytes(text.as_bytes(), Language::C, Origin::Blackbox).unwrap();
                    }
                    JournalOp::Advance(i, s) => {
                        let programs = store.programs();
                        if programs.is_empty() {
                            continue;
                        }
                        let p = &programs[i % programs.len()];
                        let next = ProgramStatus::ALL[*s as usize];
                        let attempts = if next == ProgramStatus::CrashOnly { 2 } else { p.repair_attempts };
                        let result = store.apply(&p.id, Transition::to(next).attempts(attempts));
                        prop_assert_eq!(result.is_ok(), p.status.can_transition_to(next));
                    }
                }
                prop_assert_eq!(store.counts().total() as u64, store.ingested());
            }
            store.index()
        };
        let replayed = replay(&dir.path().join(refuzz::corpus::JOURNAL_FILE)).unwrap();
        prop_assert_eq!(&replayed.programs, &index);
        let reopened = CorpusStore::open(dir.path()).unwrap();
        prop_assert_eq!(reopened.index(), index);
        for p in reopened.programs() {
            prop_assert!(reopened.path_of(&p).exists());
        }
    }
}
