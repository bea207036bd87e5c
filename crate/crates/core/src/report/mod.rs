//! Config files, run commands and the artifacts they leave behind.
//!
//! A run directory holds `runlog.jsonl`, `metrics.csv`, `horizons.csv`,
//! `report.json` and `summary.txt`. Every file has a reader here, and
//! [`ReportBundle::verify`] re-reads them all.

mod commands;
mod config;
mod emit;

pub use commands::{
    bundle_usage, cmd_compare, cmd_metrics, cmd_resume, cmd_resume_with, cmd_run, cmd_run_with, compare_reports,
    default_objectives, diagnose_log, Comparison, MethodLabel,
};
pub use config::{
    build_gateway, build_plan, parse_config, parse_config_with, Backend, Baseline, DatasetConfig,
    DiagnosticsConfig, EmbeddingBackend, ExtraHoldout, GatewayConfig, Overrides, PolicySection, RunConfig,
    ScheduleConfig, ScriptConfig,
};
pub use emit::{
    horizon_rows, horizons_csv, metrics_csv, metrics_row, read_horizons_csv, read_metrics_csv, summary_pattern,
    summary_text, write_bundle, FullReport, HorizonRow, MetricsRow, ReportBundle, RunManifest, HORIZONS_FILE,
    METRICS_FILE, REPORT_FILE, SUMMARY_FILE,
};
