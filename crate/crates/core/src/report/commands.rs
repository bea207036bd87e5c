use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{build_gateway, build_plan, Baseline, RunConfig};
use super::emit::{write_bundle, FullReport, ReportBundle, RunManifest, REPORT_FILE};
use crate::diagnostics::{
    diagnose, efficiency_summary, pareto_filter, rank_profiles, DiagnosticInputs, DiagnosticReport, Dimension,
    MethodProfile, Normalization, Objective, ObjectiveMetric, OnlineTrace, Thresholds,
};
use crate::error::{Error, Result};
use crate::gateway::{Gateway, UsageLedger};
use crate::runner::{default_horizons, resume_run, run_sequential, write_atomic, RunLog, RunOutcome, RunPlan};

/// Diagnostics of a finished run log.
pub fn diagnose_log(
    log: &RunLog,
    method: &str,
    dataset: &str,
    horizons: &[usize],
    thresholds: &Thresholds,
    baseline: Baseline,
) -> Result<DiagnosticReport> {
    let trace = OnlineTrace::new(log.online_trace())?;
    let mut matrix = log.eval_matrix()?;
    if baseline == Baseline::PostUpdate {
        matrix = matrix.with_post_update_baseline();
    }
    diagnose(DiagnosticInputs {
        method,
        dataset,
        trace: &trace,
        holdout: log.holdout_traces()?,
        matrix: Some(&matrix),
        horizons,
        efficiency: efficiency_summary(log),
        thresholds,
    })
}

fn manifest(cfg: &RunConfig, plan: &RunPlan) -> RunManifest {
    RunManifest {
        method: plan.method.clone(),
        dataset: plan.dataset.clone(),
        stream_len: plan.stream.len(),
        checkpoints: plan.checkpoints.clone(),
        horizons: plan.horizons.clone(),
        replay_budget: plan.replay_budget,
        seed: plan.seed,
        baseline: cfg.schedule.baseline,
        thresholds: cfg.diagnostics.thresholds,
    }
}

fn finish(cfg: &RunConfig, plan: &RunPlan, outcome: &RunOutcome) -> Result<ReportBundle> {
    let m = manifest(cfg, plan);
    let diagnostics = diagnose_log(&outcome.log, &m.method, &m.dataset, &m.horizons, &m.thresholds, m.baseline)?;
    let full = FullReport {
        manifest: m,
        diagnostics,
        online_usage: outcome.online_usage,
        eval_usage: Some(outcome.eval_usage),
    };
    write_bundle(&cfg.output_dir, &full)
}

/// Full run with the gateway the config describes.
pub fn cmd_run(cfg: &RunConfig) -> Result<ReportBundle> {
    let plan = build_plan(cfg)?;
    let gateway = build_gateway(&cfg.gateway)?;
    cmd_run_with(cfg, &plan, &gateway)
}

/// Full run against a caller-supplied gateway.
pub fn cmd_run_with(cfg: &RunConfig, plan: &RunPlan, gateway: &Gateway) -> Result<ReportBundle> {
    let outcome = run_sequential(plan, gateway, Some(&cfg.output_dir))?;
    finish(cfg, plan, &outcome)
}

/// Continue an interrupted run in the configured output directory.
pub fn cmd_resume(cfg: &RunConfig) -> Result<ReportBundle> {
    let plan = build_plan(cfg)?;
    let gateway = build_gateway(&cfg.gateway)?;
    cmd_resume_with(cfg, &plan, &gateway)
}

pub fn cmd_resume_with(cfg: &RunConfig, plan: &RunPlan, gateway: &Gateway) -> Result<ReportBundle> {
    let outcome = resume_run(plan, gateway, &cfg.output_dir)?;
    finish(cfg, plan, &outcome)
}

/// Recompute diagnostics from the run log in the configured output directory
/// under the config's current horizons, thresholds and baseline. No model
/// calls are made.
pub fn cmd_metrics(cfg: &RunConfig) -> Result<ReportBundle> {
    let dir = &cfg.output_dir;
    let bundle = ReportBundle::in_dir(dir);
    let log = RunLog::read(&bundle.runlog)?;
    if log.steps.is_empty() || log.snapshots.last().map(|s| s.step_index) != Some(log.steps.len()) {
        return Err(Error::Validation(format!(
            "{} does not hold a finished run",
            bundle.runlog.display()
        )));
    }
    let previous = FullReport::read(&bundle.report_json).ok();
    let checkpoints = log.checkpoints();
    let horizons = cfg.schedule.horizons.clone().unwrap_or_else(|| default_horizons(&checkpoints));
    let (method, dataset) = match &previous {
        Some(p) => (p.manifest.method.clone(), p.manifest.dataset.clone()),
        None => {
            let kind = cfg.policy.kind()?;
            let policy = crate::policies::Policy::simple(kind, cfg.policy.config())?;
            (policy.method_id(), cfg.dataset.id.clone())
        }
    };
    let thresholds = cfg.diagnostics.thresholds;
    let baseline = cfg.schedule.baseline;
    let diagnostics = diagnose_log(&log, &method, &dataset, &horizons, &thresholds, baseline)?;
    let full = FullReport {
        manifest: RunManifest {
            method,
            dataset,
            stream_len: log.steps.len(),
            checkpoints,
            horizons,
            replay_budget: previous.as_ref().and_then(|p| p.manifest.replay_budget),
            seed: previous.as_ref().map_or(cfg.seed, |p| p.manifest.seed),
            baseline,
            thresholds,
        },
        diagnostics,
        online_usage: log.online_usage(),
        eval_usage: previous.and_then(|p| p.eval_usage),
    };
    write_bundle(dir, &full)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodLabel {
    pub method: String,
    pub pattern: String,
    pub preference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dataset: String,
    pub normalization: Normalization,
    pub profiles: Vec<MethodProfile>,
    pub objectives: Vec<Objective>,
    pub pareto: Vec<String>,
    pub labels: Vec<MethodLabel>,
}

impl Comparison {
    pub fn table_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method".to_string()];
        for d in Dimension::ALL {
            header.push(format!("{}_score", d.id()));
            header.push(format!("{}_rank", d.id()));
        }
        header.extend(["pareto".into(), "pattern".into(), "preference".into()]);
        w.write_record(&header)?;
        for (p, l) in self.profiles.iter().zip(&self.labels) {
            let mut rec = vec![p.method.clone()];
            for d in Dimension::ALL {
                let s = p.get(d);
                rec.push(s.score.map(|v| format!("{v}")).unwrap_or_default());
                rec.push(s.rank.map(|v| v.to_string()).unwrap_or_default());
            }
            rec.push(self.pareto.contains(&p.method).to_string());
            rec.push(l.pattern.clone());
            rec.push(l.preference.clone());
            w.write_record(&rec)?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| Error::io("flushing CSV", e.into_error()))?)
            .expect("CSV of UTF-8 fields is UTF-8"))
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dataset: {}", self.dataset);
        let _ = writeln!(s, "normalization: {}", match self.normalization {
            Normalization::MinMax => "min-max",
            Normalization::Rank => "rank",
        });
        let _ = writeln!(s);
        for (p, l) in self.profiles.iter().zip(&self.labels) {
            let dims: Vec<String> = Dimension::ALL
                .iter()
                .map(|&d| {
                    let sc = p.get(d);
                    match (sc.score, sc.rank) {
                        (Some(v), Some(r)) => format!("{} {v:.3} (#{r})", d.id()),
                        _ => format!("{} n/a", d.id()),
                    }
                })
                .collect();
            let _ = writeln!(s, "{}: {}", p.method, dims.join("  "));
            let _ = writeln!(s, "  pattern: {} ({})", l.pattern, l.preference);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "Pareto survivors: {}", self.pareto.join(", "));
        s
    }
}

/// Objectives used when none are given: accuracies up, cost down. Hold-out
/// accuracy joins only when every report has it.
pub fn default_objectives(reports: &[DiagnosticReport]) -> Vec<Objective> {
    let mut metrics = vec![ObjectiveMetric::OnlineAcc];
    if reports.iter().all(|r| r.primary_holdout().is_some()) {
        metrics.push(ObjectiveMetric::HoldoutAcc);
    }
    metrics.extend([ObjectiveMetric::TokensTotal, ObjectiveMetric::Runtime]);
    metrics.into_iter().map(Objective::natural).collect()
}

pub fn compare_reports(
    reports: &[DiagnosticReport],
    normalization: Normalization,
    objectives: Option<&[Objective]>,
) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::Argument(format!("comparison needs at least two runs, got {}", reports.len())));
    }
    let dataset = reports[0].dataset.clone();
    if let Some(r) = reports.iter().find(|r| r.dataset != dataset) {
        return Err(Error::Validation(format!(
            "cannot compare runs on different datasets: {dataset:?} and {:?}",
            r.dataset
        )));
    }
    let objectives = objectives.map_or_else(|| default_objectives(reports), <[Objective]>::to_vec);
    Ok(Comparison {
        dataset,
        normalization,
        profiles: rank_profiles(reports, normalization)?,
        pareto: pareto_filter(reports, &objectives)?,
        objectives,
        labels: reports
            .iter()
            .map(|r| MethodLabel {
                method: r.method.clone(),
                pattern: r.pattern.label().into(),
                preference: r.pattern.preference().label().into(),
            })
            .collect(),
    })
}

/// Compare finished run directories, writing `comparison.{csv,txt,json}` to
/// `out` when given.
pub fn cmd_compare(
    bundles: &[PathBuf],
    out: Option<&Path>,
    normalization: Normalization,
    objectives: Option<&[Objective]>,
) -> Result<Comparison> {
    let reports = bundles
        .iter()
        .map(|d| FullReport::read(&d.join(REPORT_FILE)).map(|f| f.diagnostics))
        .collect::<Result<Vec<_>>>()?;
    let cmp = compare_reports(&reports, normalization, objectives)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        write_atomic(&dir.join("comparison.csv"), cmp.table_csv()?.as_bytes())?;
        write_atomic(&dir.join("comparison.txt"), cmp.text().as_bytes())?;
        let mut json = serde_json::to_string_pretty(&cmp)?;
        json.push('\n');
        write_atomic(&dir.join("comparison.json"), json.as_bytes())?;
    }
    Ok(cmp)
}

/// Online and evaluation usage of a finished bundle.
pub fn bundle_usage(dir: &Path) -> Result<(UsageLedger, Option<UsageLedger>)> {
    let full = FullReport::read(&dir.join(REPORT_FILE))?;
    Ok((full.online_usage, full.eval_usage))
}
