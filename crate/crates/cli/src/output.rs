//! Input loading and artifact emission.
//!
//! CSV and JSONL artifacts get a `<file>.config.json` sidecar holding the run
//! configuration; JSON artifacts embed it under `config`. Floats in CSV are
//! printed with 17 significant digits.

use anyhow::{Context, Result};
use fifm::bipartite::CompatibilityGraph;
use fifm::report::VerificationReport;
use fifm::{MarkedPoint, OrderedConfiguration, Particle, Space};
use serde::Serialize;
use serde_json::Value;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn load_space(path: &Path) -> Result<Space> {
    Space::from_json(&read_text(path)?).with_context(|| format!("invalid space descriptor {}", path.display()))
}

pub fn load_graph(path: &Path) -> Result<CompatibilityGraph> {
    CompatibilityGraph::from_json(&read_text(path)?).with_context(|| format!("invalid graph {}", path.display()))
}

/// An ordered particle list, or a list of `{pos, color}` points taken in order
/// with unit patience and births `0, 1, ...`.
pub fn load_configuration(path: &Path) -> Result<OrderedConfiguration> {
    let text = read_text(path)?;
    if let Ok(c) = OrderedConfiguration::from_json(&text) {
        return Ok(c);
    }
    let pts: Vec<MarkedPoint> = serde_json::from_str(&text)
        .map_err(fifm::FifmError::from)
        .with_context(|| format!("{} is neither a particle list nor a point list", path.display()))?;
    Ok(OrderedConfiguration::new(
        pts.iter()
            .enumerate()
            .map(|(i, m)| Particle { pos: m.pos, color: m.color, birth: i as f64, patience: 1.0, id: i as i64 })
            .collect(),
    ))
}

/// `--boundary` value: a preset name, inline JSON, or a JSON file of points.
pub fn load_boundary(arg: &str) -> Result<fifm::analytics::Boundary> {
    let p = PathBuf::from(arg);
    let text = if p.is_file() { read_text(&p)? } else { arg.to_string() };
    Ok(fifm::analytics::Boundary::parse(&text)?)
}

pub fn f17(x: f64) -> String {
    format!("{x:.16e}")
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    f.write_all(bytes).with_context(|| format!("cannot write {}", path.display()))
}

/// Writes a CSV or JSONL artifact and its configuration sidecar.
pub fn write_artifact(path: &Path, content: &[u8], config: &Value) -> Result<()> {
    write_file(path, content)?;
    write_file(&sidecar(path), format!("{}\n", serde_json::to_string_pretty(config)?).as_bytes())
}

/// RFC 4180 CSV from a header and rows of fields.
pub fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    Ok(w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))?)
}

/// One JSON object per line.
pub fn jsonl_bytes<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, &it)?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Prints a JSON document to stdout.
pub fn print_json(v: &Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub status: Status,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub witnesses: Vec<String>,
    pub notes: Vec<String>,
}

impl From<&VerificationReport> for CheckReport {
    fn from(r: &VerificationReport) -> Self {
        let mut witnesses: Vec<String> = r.worst_case.iter().cloned().collect();
        if !r.passed && witnesses.is_empty() {
            witnesses.push(if r.notes.is_empty() { "no witness recorded".into() } else { r.notes.join("; ") });
        }
        Self {
            check: r.check.clone(),
            status: if r.passed { Status::Pass } else { Status::Fail },
            cases: r.cases,
            max_error: r.max_error,
            tolerance: r.tolerance,
            witnesses,
            notes: r.notes.clone(),
        }
    }
}

impl CheckReport {
    pub fn skipped(check: &str, reason: &str) -> Self {
        Self {
            check: check.into(),
            status: Status::Skipped,
            cases: 0,
            max_error: f64::NAN,
            tolerance: f64::NAN,
            witnesses: Vec::new(),
            notes: vec![reason.into()],
        }
    }
}

/// Prints one line per check, writes the JSON report, and returns whether no check failed.
pub fn emit_reports(reports: &[CheckReport], config: &Value, path: Option<&Path>, runtime_s: f64) -> Result<bool> {
    for r in reports {
        let status = match r.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIPPED",
        };
        let mut line = format!("{status} {}: cases={} max_error={:.3e} tolerance={:.1e}", r.check, r.cases, r.max_error, r.tolerance);
        if let (Status::Fail, Some(w)) = (&r.status, r.witnesses.first()) {
            line.push_str(&format!(" witness={w}"));
        }
        println!("{line}");
    }
    eprintln!("runtime_s={runtime_s:.3}");
    let passed = reports.iter().all(|r| !matches!(r.status, Status::Fail));
    if let Some(p) = path {
        let doc = serde_json::json!({
            "config": config,
            "status": if passed { "PASS" } else { "FAIL" },
            "reports": reports,
        });
        write_file(p, format!("{}\n", serde_json::to_string_pretty(&doc)?).as_bytes())?;
    }
    Ok(passed)
}
