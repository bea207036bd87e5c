use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Baseline;
use crate::diagnostics::{DiagnosticReport, Pattern, Thresholds};
use crate::error::{Error, Result};
use crate::gateway::UsageLedger;
use crate::runner::{write_atomic, RUNLOG_FILE};

pub const METRICS_FILE: &str = "metrics.csv";
pub const HORIZONS_FILE: &str = "horizons.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const REPORT_FILE: &str = "report.json";

/// Settings the diagnostics were computed under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub method: String,
    pub dataset: String,
    pub stream_len: usize,
    pub checkpoints: Vec<usize>,
    pub horizons: Vec<usize>,
    pub replay_budget: Option<usize>,
    pub seed: u64,
    pub baseline: Baseline,
    pub thresholds: Thresholds,
}

/// Machine-readable report: diagnostics plus the usage of both passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullReport {
    pub manifest: RunManifest,
    pub diagnostics: DiagnosticReport,
    pub online_usage: UsageLedger,
    /// Absent when diagnostics were recomputed without the original report.
    pub eval_usage: Option<UsageLedger>,
}

impl FullReport {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }
}

/// Paths of everything one run emits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportBundle {
    pub dir: PathBuf,
    pub metrics_csv: PathBuf,
    pub horizons_csv: PathBuf,
    pub runlog: PathBuf,
    pub summary: PathBuf,
    pub report_json: PathBuf,
}

impl ReportBundle {
    pub fn in_dir(dir: &Path) -> Self {
        ReportBundle {
            dir: dir.to_path_buf(),
            metrics_csv: dir.join(METRICS_FILE),
            horizons_csv: dir.join(HORIZONS_FILE),
            runlog: dir.join(RUNLOG_FILE),
            summary: dir.join(SUMMARY_FILE),
            report_json: dir.join(REPORT_FILE),
        }
    }

    /// Re-read every artifact with its own reader and check they agree.
    pub fn verify(&self) -> Result<FullReport> {
        let full = FullReport::read(&self.report_json)?;
        let log = crate::runner::RunLog::read(&self.runlog)?;
        if log.online_trace() != full.diagnostics.trace {
            return Err(Error::Validation("run log and report disagree on the online trace".into()));
        }
        let rows = read_metrics_csv(&self.metrics_csv)?;
        if rows.len() != 1 || rows[0] != metrics_row(&full.diagnostics) {
            return Err(Error::Validation("metrics CSV does not match the report".into()));
        }
        if read_horizons_csv(&self.horizons_csv)? != horizon_rows(&full.diagnostics) {
            return Err(Error::Validation("horizon CSV does not match the report".into()));
        }
        let text = fs::read_to_string(&self.summary)
            .map_err(|e| Error::io(format!("reading {}", self.summary.display()), e))?;
        if summary_pattern(&text) != Some(full.diagnostics.pattern) {
            return Err(Error::Validation("summary pattern does not match the report".into()));
        }
        Ok(full)
    }
}

/// One metrics CSV row. Undefined values are `None` and print as empty cells.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub dataset: String,
    pub values: Vec<(String, Option<f64>)>,
    pub pattern: Option<Pattern>,
}

impl MetricsRow {
    pub fn get(&self, column: &str) -> Option<f64> {
        self.values.iter().find(|(c, _)| c == column).and_then(|(_, v)| *v)
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["method".to_string(), "dataset".to_string()];
        h.extend(self.values.iter().map(|(c, _)| c.clone()));
        h.push("pattern".into());
        h
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn metrics_row(r: &DiagnosticReport) -> MetricsRow {
    let mut values: Vec<(String, Option<f64>)> = vec![
        ("online_acc".into(), Some(r.online_acc)),
        ("ped".into(), Some(r.ped)),
        ("mer".into(), Some(r.mer)),
        ("r_min".into(), Some(r.r_min)),
        ("holdout_acc".into(), r.primary_holdout().map(|h| h.holdout_acc)),
        ("trend_ho".into(), r.primary_holdout().and_then(|h| h.trend_ho)),
    ];
    for h in r.holdout.iter().skip(1) {
        values.push((format!("holdout_acc_{}", h.set), Some(h.holdout_acc)));
        values.push((format!("trend_ho_{}", h.set), h.trend_ho));
    }
    values.push(("iv".into(), r.iv));
    for h in &r.horizons {
        values.push((format!("bwt_t{}", h.t), h.bwt));
    }
    for h in &r.horizons {
        values.push((format!("f_exact_t{}", h.t), h.f_exact));
    }
    for h in &r.horizons {
        values.push((format!("f_approx_t{}", h.t), h.f_approx));
    }
    values.push(("tokens_total".into(), Some(r.tokens_total as f64)));
    values.push(("runtime_s".into(), Some(r.runtime_s)));
    MetricsRow {
        method: r.method.clone(),
        dataset: r.dataset.clone(),
        values,
        pattern: Some(r.pattern),
    }
}

pub fn metrics_csv(r: &DiagnosticReport) -> Result<String> {
    let row = metrics_row(r);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(row.header())?;
    let mut rec = vec![row.method.clone(), row.dataset.clone()];
    rec.extend(row.values.iter().map(|(_, v)| cell(*v)));
    rec.push(row.pattern.map(|p| p.label().to_string()).unwrap_or_default());
    w.write_record(rec)?;
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::io("flushing CSV", e.into_error()))?)
        .expect("CSV of UTF-8 fields is UTF-8"))
}

fn parse_cell(path: &Path, line: usize, column: &str, text: &str) -> Result<Option<f64>> {
    if text.is_empty() {
        return Ok(None);
    }
    text.parse().map(Some).map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("column {column}: {text:?} is not a number"),
    })
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let n = header.len();
    if n < 3 || header[0] != "method" || header[1] != "dataset" || header[n - 1] != "pattern" {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "expected columns method, dataset, ..., pattern".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let values = header[2..n - 1]
            .iter()
            .zip(rec.iter().skip(2))
            .map(|(c, v)| Ok((c.clone(), parse_cell(path, line, c, v)?)))
            .collect::<Result<Vec<_>>>()?;
        let label = &rec[n - 1];
        let pattern = if label.is_empty() {
            None
        } else {
            Some(Pattern::from_label(label).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("unknown pattern label {label:?}"),
            })?)
        };
        rows.push(MetricsRow {
            method: rec[0].to_string(),
            dataset: rec[1].to_string(),
            values,
            pattern,
        });
    }
    Ok(rows)
}

/// (horizon, BWT, F) with F exact where defined, else the grid approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonRow {
    pub horizon: usize,
    pub bwt: Option<f64>,
    pub f: Option<f64>,
}

pub fn horizon_rows(r: &DiagnosticReport) -> Vec<HorizonRow> {
    r.horizons
        .iter()
        .map(|h| HorizonRow {
            horizon: h.t,
            bwt: h.bwt,
            f: h.forgetting(),
        })
        .collect()
}

pub fn horizons_csv(r: &DiagnosticReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "dataset", "horizon", "bwt", "f"])?;
    for h in horizon_rows(r) {
        w.write_record([r.method.clone(), r.dataset.clone(), h.horizon.to_string(), cell(h.bwt), cell(h.f)])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::io("flushing CSV", e.into_error()))?)
        .expect("CSV of UTF-8 fields is UTF-8"))
}

pub fn read_horizons_csv(path: &Path) -> Result<Vec<HorizonRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["method", "dataset", "horizon", "bwt", "f"] {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unexpected horizon CSV header {header:?}"),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let horizon = rec[2].parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("horizon {:?} is not a step count", &rec[2]),
        })?;
        out.push(HorizonRow {
            horizon,
            bwt: parse_cell(path, line, "bwt", &rec[3])?,
            f: parse_cell(path, line, "f", &rec[4])?,
        });
    }
    Ok(out)
}

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

pub fn summary_text(full: &FullReport) -> String {
    let r = &full.diagnostics;
    let m = &full.manifest;
    let mut s = String::new();
    let _ = writeln!(s, "method: {}", r.method);
    let _ = writeln!(s, "dataset: {}", r.dataset);
    let _ = writeln!(
        s,
        "steps: {}  checkpoints: {}  horizons: {}",
        m.stream_len,
        m.checkpoints.len(),
        m.horizons.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "online: OnlineAcc {}  PED {}  MER {}  r_min {}",
        num(Some(r.online_acc)),
        num(Some(r.ped)),
        num(Some(r.mer)),
        num(Some(r.r_min))
    );
    for h in &r.holdout {
        let tag = serde_json::to_value(h.tag).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        let _ = writeln!(
            s,
            "hold-out {} ({tag}): HoldOutAcc {}  Trend_HO {}",
            h.set,
            num(Some(h.holdout_acc)),
            num(h.trend_ho)
        );
    }
    let _ = writeln!(s, "transfer: IV {}", num(r.iv));
    for h in &r.horizons {
        let _ = writeln!(
            s,
            "  t={}: BWT {}  F_exact {}  F_approx {}",
            h.t,
            num(h.bwt),
            num(h.f_exact),
            num(h.f_approx)
        );
    }
    let _ = writeln!(
        s,
        "efficiency: tokens {}  runtime {} s  calls {}",
        r.tokens_total,
        num(Some(r.runtime_s)),
        full.online_usage.call_count
    );
    if let Some(e) = &full.eval_usage {
        let _ = writeln!(s, "evaluation cost (not counted above): tokens {}  calls {}", e.tokens_total(), e.call_count);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Pattern: {}", r.pattern.label());
    let _ = writeln!(s, "Preference: {}", r.pattern.preference().label());
    let _ = writeln!(s, "Interpretation: {}", r.pattern.interpretation());
    s
}

/// The pattern named on the summary's `Pattern:` line.
pub fn summary_pattern(text: &str) -> Option<Pattern> {
    text.lines()
        .find_map(|l| l.strip_prefix("Pattern: "))
        .and_then(|label| Pattern::from_label(label.trim()))
}

/// Write every artifact except the run log, which the runner owns.
pub fn write_bundle(dir: &Path, full: &FullReport) -> Result<ReportBundle> {
    let b = ReportBundle::in_dir(dir);
    write_atomic(&b.metrics_csv, metrics_csv(&full.diagnostics)?.as_bytes())?;
    write_atomic(&b.horizons_csv, horizons_csv(&full.diagnostics)?.as_bytes())?;
    write_atomic(&b.report_json, full.to_json().as_bytes())?;
    write_atomic(&b.summary, summary_text(full).as_bytes())?;
    Ok(b)
}
