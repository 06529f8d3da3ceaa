//! lcov tracefile reading and writing, function records only.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionCoverage {
    pub line: Option<u32>,
    pub end_line: Option<u32>,
    pub hits: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileCoverage {
    pub source_path: String,
    pub functions_found: u64,
    pub functions_hit: u64,
    pub functions: BTreeMap<String, FunctionCoverage>,
}

impl FileCoverage {
    pub fn per_function_hits(&self) -> impl Iterator<Item = (&str, u64)> {
        self.functions
            .iter()
            .map(|(name, f)| (name.as_str(), f.hits))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tracefile {
    pub records: Vec<FileCoverage>,
}

impl Tracefile {
    pub fn functions_found(&self) -> u64 {
        self.records.iter().map(|r| r.functions_found).sum()
    }

    pub fn functions_hit(&self) -> u64 {
        self.records.iter().map(|r| r.functions_hit).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LcovWarning {
    pub line: usize,
    pub message: String,
}

pub fn parse_lcov(text: &str) -> Tracefile {
    parse_lcov_with_warnings(text).0
}

#[derive(Default)]
struct Open {
    path: String,
    functions: BTreeMap<String, FunctionCoverage>,
    /// FNL index -> (start, end) for the lcov 2.x function records.
    locations: BTreeMap<u64, (Option<u32>, Option<u32>)>,
    fnf: Option<u64>,
    fnh: Option<u64>,
}

/// Parses SF/FN/FNDA/FNF/FNH (and lcov 2.x FNL/FNA) records. Other record
/// types are skipped; malformed lines produce a warning and are ignored.
/// Repeated sections for one source file are merged.
pub fn parse_lcov_with_warnings(text: &str) -> (Tracefile, Vec<LcovWarning>) {
    let mut warnings = Vec::new();
    let mut files: Vec<FileCoverage> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut open: Option<Open> = None;

    for (no, raw) in text.lines().enumerate() {
        let line_no = no + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut warn = |message: String| {
            warnings.push(LcovWarning {
                line: line_no,
                message,
            })
        };
        if line == "end_of_record" {
            match open.take() {
                Some(rec) => close(rec, &mut files, &mut index, &mut warn),
                None => warn("end_of_record without SF".into()),
            }
            continue;
        }
        let Some((tag, value)) = line.split_once(':') else {
            warn(format!("not a record: {line}"));
            continue;
        };
        if tag == "SF" {
            if let Some(rec) = open.take() {
                warn("SF before end_of_record".into());
                close(rec, &mut files, &mut index, &mut warn);
            }
            open = Some(Open {
                path: value.to_string(),
                ..Default::default()
            });
            continue;
        }
        if !matches!(tag, "FN" | "FNDA" | "FNF" | "FNH" | "FNL" | "FNA") {
            continue;
        }
        let Some(rec) = open.as_mut() else {
            warn(format!("{tag} outside a SF record"));
            continue;
        };
        if let Err(message) = apply(rec, tag, value) {
            warn(format!("{tag}: {message}"));
        }
    }
    if let Some(rec) = open.take() {
        warnings.push(LcovWarning {
            line: text.lines().count(),
            message: "missing end_of_record at end of input".into(),
        });
        close(rec, &mut files, &mut index, &mut |_| {});
    }
    (Tracefile { records: files }, warnings)
}

fn number<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.trim().parse().map_err(|_| format!("bad number `{s}`"))
}

/// Splits `<line>[,<end>],<name>`; names never start with a digit.
fn location_and_name(value: &str) -> Result<(u32, Option<u32>, &str), String> {
    let (start, rest) = value.split_once(',').ok_or("missing name")?;
    let start = number(start)?;
    if let Some((end, name)) = rest.split_once(',') {
        if !end.is_empty() && end.bytes().all(|b| b.is_ascii_digit()) {
            return Ok((start, Some(number(end)?), name));
        }
    }
    Ok((start, None, rest))
}

fn apply(rec: &mut Open, tag: &str, value: &str) -> Result<(), String> {
    match tag {
        "FN" => {
            let (line, end, name) = location_and_name(value)?;
            if name.is_empty() {
                return Err("empty function name".into());
            }
            let f = rec.functions.entry(name.to_string()).or_default();
            f.line = Some(line);
            f.end_line = end;
        }
        "FNDA" => {
            let (count, name) = value.split_once(',').ok_or("missing name")?;
            if name.is_empty() {
                return Err("empty function name".into());
            }
            let count: u64 = number(count)?;
            let f = rec.functions.entry(name.to_string()).or_default();
            f.hits = f.hits.saturating_add(count);
        }
        "FNL" => {
            let mut parts = value.split(',');
            let idx: u64 = number(parts.next().unwrap_or(""))?;
            let start = parts.next().map(number).transpose()?;
            let end = parts.next().map(number).transpose()?;
            rec.locations.insert(idx, (start, end));
        }
        "FNA" => {
            let mut parts = value.splitn(3, ',');
            let idx: u64 = number(parts.next().unwrap_or(""))?;
            let count: u64 = number(parts.next().ok_or("missing count")?)?;
            let name = parts
                .next()
                .filter(|n| !n.is_empty())
                .ok_or("missing name")?;
            let (line, end_line) = rec.locations.get(&idx).copied().unwrap_or((None, None));
            let f = rec.functions.entry(name.to_string()).or_default();
            f.line = f.line.or(line);
            f.end_line = f.end_line.or(end_line);
            f.hits = f.hits.saturating_add(count);
        }
        "FNF" => rec.fnf = Some(number(value)?),
        "FNH" => rec.fnh = Some(number(value)?),
        _ => {}
    }
    Ok(())
}

fn close(
    rec: Open,
    files: &mut Vec<FileCoverage>,
    index: &mut BTreeMap<String, usize>,
    warn: &mut dyn FnMut(String),
) {
    let listed = rec.functions.len() as u64;
    let listed_hit = rec.functions.values().filter(|f| f.hits > 0).count() as u64;
    let found = rec.fnf.unwrap_or(listed);
    let mut hit = rec.fnh.unwrap_or(listed_hit);
    if hit > found {
        warn(format!(
            "{}: FNH {hit} exceeds FNF {found}; clamped",
            rec.path
        ));
        hit = found;
    }
    match index.get(&rec.path) {
        Some(&i) => {
            let existing = &mut files[i];
            for (name, f) in rec.functions {
                let e = existing.functions.entry(name).or_default();
                e.line = e.line.or(f.line);
                e.end_line = e.end_line.or(f.end_line);
                e.hits = e.hits.saturating_add(f.hits);
            }
            let union = existing.functions.len() as u64;
            existing.functions_found = existing.functions_found.max(found).max(union);
            existing.functions_hit = if union > 0 {
                existing.functions.values().filter(|f| f.hits > 0).count() as u64
            } else {
                existing.functions_hit.max(hit)
            }
            .min(existing.functions_found);
        }
        None => {
            index.insert(rec.path.clone(), files.len());
            files.push(FileCoverage {
                source_path: rec.path,
                functions_found: found,
                functions_hit: hit,
                functions: rec.functions,
            });
        }
    }
}

pub fn render_lcov(trace: &Tracefile) -> String {
    let mut out = String::new();
    for rec in &trace.records {
        let _ = writeln!(out, "SF:{}", rec.source_path);
        for (name, f) in &rec.functions {
            match (f.line, f.end_line) {
                (Some(line), Some(end)) => {
                    let _ = writeln!(out, "FN:{line},{end},{name}");
                }
                (Some(line), None) => {
                    let _ = writeln!(out, "FN:{line},{name}");
                }
                _ => {}
            }
        }
        for (name, f) in &rec.functions {
            let _ = writeln!(out, "FNDA:{},{name}", f.hits);
        }
        let _ = writeln!(out, "FNF:{}", rec.functions_found);
        let _ = writeln!(out, "FNH:{}", rec.functions_hit);
        out.push_str("end_of_record\n");
    }
    out
}
