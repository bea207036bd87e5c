mod common;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use common::golden_fixture;
use seqmem::gateway::{
    Gateway, GenerationRequest, GenerationResult, Generator, HashingEmbedder, ScriptRule, ScriptedModel,
};
use seqmem::report::{build_plan, cmd_resume_with, cmd_run_with, parse_config, parse_config_with, Overrides, RunConfig};
use seqmem::runner::{ResumeToken, RESUME_FILE};
use seqmem::{Error, Result};

/// Scripted model that fails hard on any request mentioning `poison`.
struct Failing {
    inner: ScriptedModel,
    poison: String,
}

impl Generator for Failing {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult> {
        if request.full_text().contains(&self.poison) {
            return Err(Error::gateway("simulated outage", false));
        }
        self.inner.generate(request)
    }
}

fn model() -> ScriptedModel {
    ScriptedModel::new(
        vec![
            ScriptRule::pattern(r"^# Insight extraction", "Check the key.\nRepeat the key verbatim."),
            ScriptRule::pattern(r"^# Self-reflection", "Look closer at the key."),
            // hinted tasks are solved on the attempt after a reflection
            ScriptRule::pattern(r"(?s)Look closer at the key.*---.*key=(\w+) HINT", "$1"),
        ],
        Some("WRONG".into()),
    )
    .unwrap()
}

fn gateway(poison: Option<&str>) -> Gateway {
    match poison {
        Some(p) => Gateway::new(
            Arc::new(Failing {
                inner: model(),
                poison: p.into(),
            }),
            Arc::new(HashingEmbedder::default()),
        ),
        None => Gateway::new(Arc::new(model()), Arc::new(HashingEmbedder::default())),
    }
}

fn expel_config(dir: &Path, out: &str) -> RunConfig {
    let path = golden_fixture(dir, out);
    let text = fs::read_to_string(&path)
        .unwrap()
        .replace("id = \"exp_recent\"\nk = 1", "id = \"expel_mt\"\nk = 2\nbatch_update_size = 3");
    fs::write(&path, text).unwrap();
    parse_config_with(&path, &Overrides { checkpoints: Some(5), horizons: Some(vec![4, 8]), ..Default::default() })
        .unwrap()
}

#[test]
fn aborted_run_resumes_to_identical_log() {
    let dir = tempfile::tempdir().unwrap();
    let full_cfg = expel_config(dir.path(), "full");
    let plan = build_plan(&full_cfg).unwrap();
    let full = cmd_run_with(&full_cfg, &plan, &gateway(None)).unwrap();
    let trace = seqmem::report::FullReport::read(&full.report_json).unwrap().diagnostics.trace;
    assert!(trace.contains(&0) && trace.contains(&1), "{trace:?}");
    let log = seqmem::runner::RunLog::read(&full.runlog).unwrap();
    assert!(log.snapshots.last().unwrap().state.to_json().contains("Repeat the key verbatim."));

    let mut cut_cfg = full_cfg.clone();
    cut_cfg.output_dir = dir.path().join("cut");
    let err = cmd_run_with(&cut_cfg, &plan, &gateway(Some("key=W11"))).unwrap_err();
    assert!(matches!(err, Error::Gateway { .. }), "{err}");
    let token = ResumeToken::read(&cut_cfg.output_dir.join(RESUME_FILE)).unwrap();
    assert_eq!(token.last_completed_step, 10);
    assert_eq!(token.snapshot_step, Some(8));

    let resumed = cmd_resume_with(&cut_cfg, &plan, &gateway(None)).unwrap();
    assert_eq!(fs::read(&full.runlog).unwrap(), fs::read(&resumed.runlog).unwrap());
    assert_eq!(fs::read(&full.metrics_csv).unwrap(), fs::read(&resumed.metrics_csv).unwrap());
    assert_eq!(fs::read(&full.report_json).unwrap(), fs::read(&resumed.report_json).unwrap());
}

#[test]
fn resume_tolerates_torn_and_uncommitted_lines() {
    let dir = tempfile::tempdir().unwrap();
    let full_cfg = expel_config(dir.path(), "full");
    let plan = build_plan(&full_cfg).unwrap();
    let full = cmd_run_with(&full_cfg, &plan, &gateway(None)).unwrap();

    let mut cut_cfg = full_cfg.clone();
    cut_cfg.output_dir = dir.path().join("cut");
    cmd_run_with(&cut_cfg, &plan, &gateway(Some("key=W7"))).unwrap_err();
    let log_path = cut_cfg.output_dir.join("runlog.jsonl");
    // a step line written after the token, then a half-written line
    let step7 = fs::read_to_string(&full.runlog).unwrap().lines().nth(6 + 1).unwrap().to_string();
    assert!(step7.contains("\"step\":7"), "{step7}");
    let mut f = fs::OpenOptions::new().append(true).open(&log_path).unwrap();
    writeln!(f, "{step7}").unwrap();
    write!(f, "{{\"event\":\"step\",\"st").unwrap();
    drop(f);

    let resumed = cmd_resume_with(&cut_cfg, &plan, &gateway(None)).unwrap();
    assert_eq!(fs::read(&full.runlog).unwrap(), fs::read(&resumed.runlog).unwrap());
}

#[test]
fn resume_refuses_a_different_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = expel_config(dir.path(), "cut");
    let plan = build_plan(&cfg).unwrap();
    cmd_run_with(&cfg, &plan, &gateway(Some("key=W5"))).unwrap_err();

    let mut other = cfg.clone();
    other.policy.id = "exp_rag".into();
    let other_plan = build_plan(&other).unwrap();
    let err = cmd_resume_with(&other, &other_plan, &gateway(None)).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");

    let mut regrid = cfg.clone();
    regrid.schedule.n_checkpoints = 4;
    let regrid_plan = build_plan(&regrid).unwrap();
    let err = cmd_resume_with(&regrid, &regrid_plan, &gateway(None)).unwrap_err();
    assert!(err.to_string().contains("checkpoint"), "{err}");
}

#[test]
fn resume_without_token_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(&golden_fixture(dir.path(), "never")).unwrap();
    let plan = build_plan(&cfg).unwrap();
    assert!(cmd_resume_with(&cfg, &plan, &gateway(None)).is_err());
}
