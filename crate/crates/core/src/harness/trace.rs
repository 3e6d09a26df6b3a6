//! Per-iteration records and their CSV, JSONL and SVG renderings.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::sampler::Provenance;
use crate::tasks::GridMetrics;

pub const CSV_HEADER: [&str; 6] = ["iteration", "evaluations", "best_so_far", "loss", "clip_low_frac", "clip_high_frac"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewCompletion {
    pub text: String,
    pub score: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Cumulative evaluations, warmstart included.
    pub evaluations: usize,
    pub best_so_far: f64,
    pub loss: Option<f64>,
    pub clip_low_frac: Option<f64>,
    pub clip_high_frac: Option<f64>,
    pub group_size: usize,
    pub cold_start: bool,
    pub new: Vec<NewCompletion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "message")]
pub enum RunStatus {
    /// Budget exhausted.
    Complete,
    /// Best score reached the stop threshold.
    Stopped,
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub found: bool,
    pub best_score: f64,
    pub best_text: String,
    pub evaluations: usize,
    pub iterations: usize,
    pub updates: usize,
    pub wall_time_secs: f64,
    pub status: RunStatus,
    pub grid_metrics: Option<GridMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<IterationRecord>,
    pub summary: Summary,
}

impl Trace {
    /// Best-so-far after at most `evaluations` evaluations, if any happened.
    pub fn best_at(&self, evaluations: usize) -> Option<f64> {
        self.records
            .iter()
            .take_while(|r| r.evaluations <= evaluations)
            .last()
            .map(|r| r.best_so_far)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Csv,
    Jsonl,
    Svg,
}

/// One CSV row; floats use Rust's shortest round-trip formatting and
/// missing values are empty fields.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub iteration: usize,
    pub evaluations: usize,
    pub best_so_far: f64,
    pub loss: Option<f64>,
    pub clip_low_frac: Option<f64>,
    pub clip_high_frac: Option<f64>,
}

impl From<&IterationRecord> for CsvRow {
    fn from(r: &IterationRecord) -> Self {
        Self {
            iteration: r.iteration,
            evaluations: r.evaluations,
            best_so_far: r.best_so_far,
            loss: r.loss,
            clip_low_frac: r.clip_low_frac,
            clip_high_frac: r.clip_high_frac,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn csv_string(rows: &[CsvRow]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            r.evaluations.to_string(),
            r.best_so_far.to_string(),
            opt(r.loss),
            opt(r.clip_low_frac),
            opt(r.clip_high_frac),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(HarnessError::Format(format!("unexpected header {header:?}")));
    }
    let num = |s: &str| -> Result<f64, HarnessError> { s.parse().map_err(|_| HarnessError::Format(format!("bad number {s:?}"))) };
    let maybe = |s: &str| -> Result<Option<f64>, HarnessError> { if s.is_empty() { Ok(None) } else { num(s).map(Some) } };
    let int = |s: &str| -> Result<usize, HarnessError> { s.parse().map_err(|_| HarnessError::Format(format!("bad integer {s:?}"))) };
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(CsvRow {
                iteration: int(&rec[0])?,
                evaluations: int(&rec[1])?,
                best_so_far: num(&rec[2])?,
                loss: maybe(&rec[3])?,
                clip_low_frac: maybe(&rec[4])?,
                clip_high_frac: maybe(&rec[5])?,
            })
        })
        .collect()
}

pub fn jsonl_string(records: &[IterationRecord]) -> Result<String, HarnessError> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Best-so-far against evaluations, one polyline per labelled run.
pub fn svg_string(runs: &[(&str, &[IterationRecord])]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 56.0;
    let points = runs.iter().flat_map(|(_, r)| r.iter());
    let max_x = points.clone().map(|r| r.evaluations).max().unwrap_or(1).max(1) as f64;
    let (mut lo, mut hi) = points.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r.best_so_far), hi.max(r.best_so_far))
    });
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let sx = |x: f64| M + x / max_x * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - lo) / (hi - lo) * (H - 2.0 * M);
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"];

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{M}" y1="{y}" x2="{x}" y2="{y}" stroke="black"/><line x1="{M}" y1="{M}" x2="{M}" y2="{y}" stroke="black"/>"#,
        y = H - M,
        x = W - M
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">evaluations</text>"#, W / 2.0, H - 16.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{y}" text-anchor="middle" font-size="14" transform="rotate(-90 16 {y})">best so far</text>"#,
        y = H / 2.0
    );
    let _ = writeln!(s, r#"<text x="{M}" y="{}" text-anchor="middle" font-size="10">0</text>"#, H - M + 14.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="10">{max_x}</text>"#, W - M, H - M + 14.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{lo:.3}</text>"#, M - 4.0, H - M);
    let _ = writeln!(s, r#"<text x="{}" y="{M}" text-anchor="end" font-size="10">{hi:.3}</text>"#, M - 4.0);
    for (i, (label, records)) in runs.iter().enumerate() {
        let pts: Vec<String> = records
            .iter()
            .map(|r| format!("{:.2},{:.2}", sx(r.evaluations as f64), sy(r.best_so_far)))
            .collect();
        let color = palette[i % palette.len()];
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
            pts.join(" "),
            xml_escape(label)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}">{}</text>"#,
            W - M - 120.0,
            M + 14.0 * i as f64,
            xml_escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes every file to a temporary sibling first and renames only after
/// all writes succeeded, so a failure leaves nothing behind.
pub fn write_files_atomically(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir)?;
    let mut temps: Vec<PathBuf> = Vec::with_capacity(files.len());
    let cleanup = |temps: &[PathBuf]| {
        for t in temps {
            let _ = fs::remove_file(t);
        }
    };
    for (name, bytes) in files {
        let tmp = dir.join(format!(".{name}.tmp"));
        let res = fs::File::create(&tmp).and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        });
        temps.push(tmp);
        if let Err(e) = res {
            cleanup(&temps);
            return Err(e.into());
        }
    }
    let mut done = Vec::with_capacity(files.len());
    for ((name, _), tmp) in files.iter().zip(&temps) {
        let dest = dir.join(name);
        if let Err(e) = fs::rename(tmp, &dest) {
            cleanup(&temps);
            for d in &done {
                let _ = fs::remove_file(d);
            }
            return Err(e.into());
        }
        done.push(dest);
    }
    Ok(done)
}

/// Renders `trace` into `dir` as `trace.csv`, `trace.jsonl` and/or `trace.svg`.
pub fn emit_trace(trace: &Trace, formats: &[TraceFormat], dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut files = Vec::new();
    for f in formats {
        match f {
            TraceFormat::Csv => {
                let rows: Vec<CsvRow> = trace.records.iter().map(CsvRow::from).collect();
                files.push(("trace.csv".to_string(), csv_string(&rows)?.into_bytes()));
            }
            TraceFormat::Jsonl => files.push(("trace.jsonl".to_string(), jsonl_string(&trace.records)?.into_bytes())),
            TraceFormat::Svg => files.push(("trace.svg".to_string(), svg_string(&[("run", &trace.records)]).into_bytes())),
        }
    }
    write_files_atomically(dir, &files)
}
