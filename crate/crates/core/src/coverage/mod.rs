//! Function coverage per compiler component, before and after a campaign.

mod lcov;

use std::fmt::Write as _;

use globset::{Glob, GlobSet, GlobSetBuilder};
use serde::{Deserialize, Serialize};

use crate::percent::{display_or_dash, Delta, Percent};
use crate::report::Format;

pub use lcov::{
    parse_lcov, parse_lcov_with_warnings, render_lcov, FileCoverage, FunctionCoverage, LcovWarning,
    Tracefile,
};

pub const OTHER: &str = "other";

const DEFAULT_MAP: &str = include_str!("llvm.map");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MapError {
    #[error("line {line}: expected `glob = component`")]
    Syntax { line: usize },
    #[error("line {line}: bad glob: {message}")]
    Glob { line: usize, message: String },
}

/// Ordered path rules; the first matching glob names the component.
#[derive(Debug, Clone)]
pub struct ComponentMap {
    rules: Vec<(String, String)>,
    set: GlobSet,
}

impl ComponentMap {
    pub fn new(rules: Vec<(String, String)>) -> Result<Self, MapError> {
        let mut builder = GlobSetBuilder::new();
        for (i, (glob, _)) in rules.iter().enumerate() {
            let glob = Glob::new(glob).map_err(|e| MapError::Glob {
                line: i + 1,
                message: e.to_string(),
            })?;
            builder.add(glob);
        }
        let set = builder.build().map_err(|e| MapError::Glob {
            line: 0,
            message: e.to_string(),
        })?;
        Ok(ComponentMap { rules, set })
    }

    /// Reads `glob = component` lines; `#` comment lines and blanks are skipped.
    pub fn parse(text: &str) -> Result<Self, MapError> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (glob, component) = line
                .split_once('=')
                .ok_or(MapError::Syntax { line: i + 1 })?;
            let (glob, component) = (glob.trim(), component.trim());
            if glob.is_empty() || component.is_empty() {
                return Err(MapError::Syntax { line: i + 1 });
            }
            Glob::new(glob).map_err(|e| MapError::Glob {
                line: i + 1,
                message: e.to_string(),
            })?;
            rules.push((glob.to_string(), component.to_string()));
        }
        ComponentMap::new(rules)
    }

    pub fn llvm_default() -> Self {
        ComponentMap::parse(DEFAULT_MAP).expect("embedded map is valid")
    }

    pub fn component_of(&self, path: &str) -> &str {
        self.set
            .matches(path)
            .into_iter()
            .min()
            .map_or(OTHER, |i| self.rules[i].1.as_str())
    }

    /// Distinct components in rule order, then `other`.
    pub fn components(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for (_, c) in &self.rules {
            if !out.contains(&c.as_str()) {
                out.push(c);
            }
        }
        if !out.contains(&OTHER) {
            out.push(OTHER);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentRow {
    pub component: String,
    pub functions_found: u64,
    pub functions_hit: u64,
    /// Undefined when nothing was found.
    pub percent: Option<Percent>,
}

impl ComponentRow {
    pub fn new(component: impl Into<String>, found: u64, hit: u64) -> Self {
        ComponentRow {
            component: component.into(),
            functions_found: found,
            functions_hit: hit,
            percent: Percent::from_ratio(hit, found),
        }
    }

    /// A row carrying only a published percentage, as `tenths` of 1000.
    pub fn from_percent(component: impl Into<String>, percent: Percent) -> Self {
        let tenths = percent.tenths().clamp(0, 1000) as u64;
        ComponentRow::new(component, 1000, tenths)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageTable {
    pub rows: Vec<ComponentRow>,
}

impl CoverageTable {
    pub fn row(&self, component: &str) -> Option<&ComponentRow> {
        self.rows.iter().find(|r| r.component == component)
    }

    pub fn functions_found(&self) -> u64 {
        self.rows.iter().map(|r| r.functions_found).sum()
    }
}

pub fn component_table(trace: &Tracefile, map: &ComponentMap) -> CoverageTable {
    let components = map.components();
    let mut sums = vec![(0u64, 0u64); components.len()];
    for rec in &trace.records {
        let name = map.component_of(&rec.source_path);
        let i = components
            .iter()
            .position(|c| *c == name)
            .expect("component listed");
        sums[i].0 += rec.functions_found;
        sums[i].1 += rec.functions_hit;
    }
    CoverageTable {
        rows: components
            .iter()
            .zip(sums)
            .map(|(c, (found, hit))| ComponentRow::new(*c, found, hit))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaFlag {
    OnlyBefore,
    OnlyAfter,
    /// Present in both tables but with zero functions found in one.
    Undefined,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub component: String,
    pub before: Option<Percent>,
    pub after: Option<Percent>,
    pub delta: Option<Delta>,
    pub flag: Option<DeltaFlag>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaTable {
    pub rows: Vec<DeltaRow>,
}

impl DeltaTable {
    pub fn row(&self, component: &str) -> Option<&DeltaRow> {
        self.rows.iter().find(|r| r.component == component)
    }
}

/// Per-component `after - before`, in the order components first appear.
pub fn delta(before: &CoverageTable, after: &CoverageTable) -> DeltaTable {
    let mut names: Vec<&str> = before.rows.iter().map(|r| r.component.as_str()).collect();
    for r in &after.rows {
        if !names.contains(&r.component.as_str()) {
            names.push(&r.component);
        }
    }
    let rows = names
        .into_iter()
        .map(|name| {
            let b = before.row(name);
            let a = after.row(name);
            let (bp, ap) = (b.and_then(|r| r.percent), a.and_then(|r| r.percent));
            let flag = match (b, a) {
                (Some(_), None) => Some(DeltaFlag::OnlyBefore),
                (None, Some(_)) => Some(DeltaFlag::OnlyAfter),
                _ if bp.is_none() || ap.is_none() => Some(DeltaFlag::Undefined),
                _ => None,
            };
            DeltaRow {
                component: name.to_string(),
                before: bp,
                after: ap,
                delta: match (bp, ap) {
                    (Some(b), Some(a)) => Some(a.since(b)),
                    _ => None,
                },
                flag,
            }
        })
        .collect();
    DeltaTable { rows }
}

fn delta_cell(row: &DeltaRow) -> String {
    match (row.delta, row.flag) {
        (Some(d), _) => d.to_string(),
        (None, Some(DeltaFlag::OnlyBefore)) => "— (only before)".into(),
        (None, Some(DeltaFlag::OnlyAfter)) => "— (only after)".into(),
        _ => "—".into(),
    }
}

/// Component, (B) before, (A) after and Δ columns.
pub fn render_delta(table: &DeltaTable, format: Format) -> String {
    match format {
        Format::Json => {
            let mut out = serde_json::to_string_pretty(table).expect("delta serializes");
            out.push('\n');
            out
        }
        Format::Markdown => {
            let mut out = String::from("| Component | (B) | (A) | Δ |\n|---|---:|---:|---:|\n");
            for r in &table.rows {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} |",
                    r.component,
                    display_or_dash(r.before),
                    display_or_dash(r.after),
                    delta_cell(r)
                );
            }
            out
        }
        Format::Text => {
            let width = table
                .rows
                .iter()
                .map(|r| r.component.chars().count())
                .max()
                .unwrap_or(0)
                .max("Component".len());
            let mut out = format!(
                "{:<width$}  {:>6}  {:>6}  {:>6}\n",
                "Component", "(B)", "(A)", "Δ"
            );
            for r in &table.rows {
                let _ = writeln!(
                    out,
                    "{:<width$}  {:>6}  {:>6}  {:>6}",
                    r.component,
                    display_or_dash(r.before),
                    display_or_dash(r.after),
                    delta_cell(r)
                );
            }
            out
        }
    }
}

/// Renders one coverage table (found, hit, percent per component).
pub fn render_table(table: &CoverageTable, format: Format) -> String {
    match format {
        Format::Json => {
            let mut out = serde_json::to_string_pretty(table).expect("table serializes");
            out.push('\n');
            out
        }
        Format::Markdown => {
            let mut out =
                String::from("| Component | Found | Hit | Coverage (%) |\n|---|---:|---:|---:|\n");
            for r in &table.rows {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} |",
                    r.component,
                    r.functions_found,
                    r.functions_hit,
                    display_or_dash(r.percent)
                );
            }
            out
        }
        Format::Text => {
            let mut out = String::new();
            for r in &table.rows {
                let _ = writeln!(
                    out,
                    "{:<20} {:>8} {:>8} {:>6}",
                    r.component,
                    r.functions_found,
                    r.functions_hit,
                    display_or_dash(r.percent)
                );
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(entries: &[(&str, u64, u64)]) -> Tracefile {
        Tracefile {
            records: entries
                .iter()
                .map(|(p, f, h)| FileCoverage {
                    source_path: p.to_string(),
                    functions_found: *f,
                    functions_hit: *h,
                    ..Default::default()
                })
                .collect(),
        }
    }

    #[test]
    fn first_matching_rule_wins() {
        let map = ComponentMap::llvm_default();
        let root = "/src/llvm-project";
        assert_eq!(
            map.component_of(&format!(
                "{root}/llvm/lib/Transforms/Vectorize/SLPVectorizer.cpp"
            )),
            "Vectorization"
        );
        assert_eq!(
            map.component_of(&format!("{root}/llvm/lib/Transforms/Scalar/LICM.cpp")),
            "Loop Opt."
        );
        assert_eq!(
            map.component_of(&format!("{root}/llvm/lib/Transforms/Scalar/ADCE.cpp")),
            "DCE"
        );
        assert_eq!(
            map.component_of(&format!("{root}/llvm/lib/Transforms/IPO/Inliner.cpp")),
            "Inlining"
        );
        assert_eq!(
            map.component_of(&format!("{root}/llvm/lib/Transforms/Scalar/GVN.cpp")),
            "Opt. Passes"
        );
        assert_eq!(
            map.component_of(&format!("{root}/clang/lib/Parse/ParseDecl.cpp")),
            "Frontend (Parser)"
        );
        assert_eq!(
            map.component_of(&format!("{root}/llvm/lib/Target/X86/X86ISelLowering.cpp")),
            "Backend Code Gen."
        );
        assert_eq!(map.component_of("/usr/include/stdio.h"), OTHER);
    }

    #[test]
    fn default_map_lists_the_nine_components() {
        let map = ComponentMap::llvm_default();
        assert_eq!(
            map.components(),
            [
                "Frontend (Parser)",
                "AST & Semantics",
                "IR Generation",
                "Loop Opt.",
                "Vectorization",
                "Inlining",
                "DCE",
                "Opt. Passes",
                "Backend Code Gen.",
                OTHER
            ]
        );
    }

    #[test]
    fn table_sums_and_keeps_unmatched_paths() {
        let map = ComponentMap::parse("**/Vectorize/** = Vectorization\n").unwrap();
        let t = trace(&[
            ("/l/Vectorize/A.cpp", 60, 10),
            ("/l/Vectorize/B.cpp", 40, 5),
            ("/elsewhere.c", 7, 7),
        ]);
        let table = component_table(&t, &map);
        let vec = table.row("Vectorization").unwrap();
        assert_eq!((vec.functions_found, vec.functions_hit), (100, 15));
        assert_eq!(vec.percent, Some(Percent::from_tenths(150)));
        assert_eq!(table.row(OTHER).unwrap().functions_found, 7);
        assert_eq!(table.functions_found(), t.functions_found());
    }

    #[test]
    fn empty_component_is_undefined_not_zero() {
        let map = ComponentMap::parse("**/DCE* = DCE\n").unwrap();
        let table = component_table(&Tracefile::default(), &map);
        assert_eq!(table.row("DCE").unwrap().percent, None);
        assert!(render_table(&table, Format::Text).contains('—'));
    }

    #[test]
    fn delta_signs_and_flags() {
        let before = CoverageTable {
            rows: vec![
                ComponentRow::from_percent("Inlining", Percent::from_tenths(118)),
                ComponentRow::from_percent("Gone", Percent::from_tenths(10)),
            ],
        };
        let after = CoverageTable {
            rows: vec![ComponentRow::from_percent(
                "Inlining",
                Percent::from_tenths(330),
            )],
        };
        let d = delta(&before, &after);
        assert_eq!(
            d.row("Inlining").unwrap().delta.unwrap().to_string(),
            "+21.2"
        );
        assert_eq!(d.row("Gone").unwrap().flag, Some(DeltaFlag::OnlyBefore));
        let md = render_delta(&d, Format::Markdown);
        assert!(md.contains("| Inlining | 11.8 | 33.0 | +21.2 |"), "{md}");
    }

    #[test]
    fn map_syntax_errors() {
        assert_eq!(
            ComponentMap::parse("no equals").unwrap_err(),
            MapError::Syntax { line: 1 }
        );
        assert!(matches!(
            ComponentMap::parse("a[ = X"),
            Err(MapError::Glob { .. })
        ));
    }
}
