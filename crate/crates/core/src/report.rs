//! Campaign statistics and their text, JSON and Markdown renderings.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::ProgramStatus;
use crate::percent::{display_or_dash, Percent};
use crate::repair::RepairTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignStats {
    pub total_tests: u64,
    pub valid_before: u64,
    pub valid_after: u64,
    pub crash_only: u64,
    /// Programs left unresolved because validation or the model failed.
    pub tool_errors: u64,
    pub rate_before: Option<Percent>,
    pub rate_after: Option<Percent>,
    /// Mean over programs that needed at least one repair attempt.
    pub mean_time_per_test_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("{traces} traces plus {pre_valid} pre-valid programs exceed the {total} tests")]
    Inconsistent {
        traces: u64,
        pre_valid: u64,
        total: u64,
    },
    #[error("valid_before {before} > valid_after {after} or valid_after > total {total}")]
    Order { before: u64, after: u64, total: u64 },
    #[error("valid_after + crash_only = {sum} exceeds total {total}")]
    Overflow { sum: u64, total: u64 },
}

impl CampaignStats {
    /// Stats from raw counts; everything not valid or quarantined is
    /// counted as a tool error.
    pub fn from_counts(
        valid_before: u64,
        valid_after: u64,
        crash_only: u64,
        total_tests: u64,
        mean_time_per_test_s: Option<f64>,
    ) -> Result<Self, StatsError> {
        if valid_before > valid_after || valid_after > total_tests {
            return Err(StatsError::Order {
                before: valid_before,
                after: valid_after,
                total: total_tests,
            });
        }
        let sum = valid_after + crash_only;
        if sum > total_tests {
            return Err(StatsError::Overflow {
                sum,
                total: total_tests,
            });
        }
        Ok(CampaignStats {
            total_tests,
            valid_before,
            valid_after,
            crash_only,
            tool_errors: total_tests - sum,
            rate_before: Percent::from_ratio(valid_before, total_tests),
            rate_after: Percent::from_ratio(valid_after, total_tests),
            mean_time_per_test_s: mean_time_per_test_s.map(round_tenth),
        })
    }
}

fn round_tenth(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// `traces` covers every program the loop touched; `pre_valid` counts
/// programs that were already Valid and never entered it.
pub fn compute_stats(
    traces: &[RepairTrace],
    pre_valid: u64,
    total: u64,
) -> Result<CampaignStats, StatsError> {
    let traced = traces.len() as u64;
    if traced + pre_valid > total {
        return Err(StatsError::Inconsistent {
            traces: traced,
            pre_valid,
            total,
        });
    }
    let count = |f: &dyn Fn(&RepairTrace) -> bool| traces.iter().filter(|t| f(t)).count() as u64;
    let valid_before = pre_valid + count(&|t| t.valid_without_repair());
    let valid_after = pre_valid + count(&|t| t.final_status == ProgramStatus::Valid);
    let crash_only = count(&|t| t.final_status == ProgramStatus::CrashOnly);
    let repaired: Vec<u64> = traces
        .iter()
        .filter(|t| !t.attempts.is_empty())
        .map(|t| t.total_time_ms)
        .collect();
    let mean = (!repaired.is_empty())
        .then(|| repaired.iter().sum::<u64>() as f64 / repaired.len() as f64 / 1000.0);
    CampaignStats::from_counts(valid_before, valid_after, crash_only, total, mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
    Markdown,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" | "txt" => Ok(Format::Text),
            "json" => Ok(Format::Json),
            "markdown" | "md" => Ok(Format::Markdown),
            other => Err(format!("unknown format `{other}` (text, json, markdown)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledStats {
    pub label: String,
    #[serde(flatten)]
    pub stats: CampaignStats,
}

fn rate_cell(count: u64, rate: Option<Percent>) -> String {
    match rate {
        Some(rate) => format!("({count}) {rate}%"),
        None => format!("({count}) —"),
    }
}

fn time_cell(mean: Option<f64>) -> String {
    mean.map_or_else(|| "—".to_string(), |s| format!("{s:.1}s"))
}

const HEADERS: [&str; 7] = [
    "Set",
    "B Valid",
    "A Valid",
    "# Tests",
    "Crash-only",
    "Tool errors",
    "Time/Test",
];

fn cells(row: &LabeledStats) -> [String; 7] {
    let s = &row.stats;
    [
        row.label.clone(),
        rate_cell(s.valid_before, s.rate_before),
        rate_cell(s.valid_after, s.rate_after),
        s.total_tests.to_string(),
        s.crash_only.to_string(),
        s.tool_errors.to_string(),
        time_cell(s.mean_time_per_test_s),
    ]
}

pub fn render(stats: &CampaignStats, format: Format) -> String {
    match format {
        Format::Json => {
            let mut out = serde_json::to_string_pretty(stats).expect("stats serialize");
            out.push('\n');
            out
        }
        _ => render_rows(
            &[LabeledStats {
                label: "corpus".into(),
                stats: stats.clone(),
            }],
            format,
        ),
    }
}

/// One row per labelled campaign, shaped like a validity-rate table.
pub fn render_rows(rows: &[LabeledStats], format: Format) -> String {
    match format {
        Format::Json => {
            let mut out = serde_json::to_string_pretty(rows).expect("stats serialize");
            out.push('\n');
            out
        }
        Format::Markdown => {
            let mut out = format!("| {} |\n", HEADERS.join(" | "));
            out.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
            for row in rows {
                let _ = writeln!(out, "| {} |", cells(row).join(" | "));
            }
            out
        }
        Format::Text => {
            let table: Vec<[String; 7]> = rows.iter().map(cells).collect();
            let mut widths = HEADERS.map(|h| h.chars().count());
            for row in &table {
                for (w, cell) in widths.iter_mut().zip(row) {
                    *w = (*w).max(cell.chars().count());
                }
            }
            let mut out = String::new();
            let mut line = |cols: &[String]| {
                let parts: Vec<String> = cols
                    .iter()
                    .zip(widths)
                    .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                    .collect();
                let _ = writeln!(out, "{}", parts.join("  ").trim_end());
            };
            line(&HEADERS.map(String::from));
            for row in &table {
                line(row);
            }
            out
        }
    }
}

/// Summary line with the status breakdown used by the CLI.
pub fn summary_line(stats: &CampaignStats) -> String {
    format!(
        "tests={} valid_before={} ({}) valid_after={} ({}) crash_only={} tool_errors={}",
        stats.total_tests,
        stats.valid_before,
        display_or_dash(stats.rate_before),
        stats.valid_after,
        display_or_dash(stats.rate_after),
        stats.crash_only,
        stats.tool_errors
    )
}
