mod common;

use std::fs;
use std::path::Path;
use std::time::Instant;

use common::{golden_fixture, golden_values, write_jsonl, Xorshift};
use seqmem::diagnostics::oracle::{oracle_metrics, OracleMatrix};
use seqmem::diagnostics::{
    diagnose, DiagnosticInputs, DiagnosticReport, Dimension, EfficiencySummary, EvalMatrix, Normalization, Objective,
    ObjectiveMetric, OnlineTrace, Thresholds,
};
use seqmem::report::{
    build_gateway, build_plan, cmd_compare, cmd_metrics, cmd_run, cmd_run_with, compare_reports, parse_config,
    parse_config_with, read_horizons_csv, read_metrics_csv, Baseline, FullReport, Overrides, ReportBundle,
};
use seqmem::stream::Task;
use seqmem::Error;

fn assert_close(name: &str, got: f64, want: f64, tol: f64) {
    assert!((got - want).abs() <= tol, "{name}: got {got}, want {want}");
}

#[test]
fn golden_run_matches_hand_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(&golden_fixture(dir.path(), "out")).unwrap();
    let started = Instant::now();
    let bundle = cmd_run(&cfg).unwrap();
    assert!(started.elapsed().as_secs_f64() < 5.0);

    let rows = read_metrics_csv(&bundle.metrics_csv).unwrap();
    assert_eq!(rows.len(), 1);
    let row = &rows[0];
    let full = FullReport::read(&bundle.report_json).unwrap();
    for (metric, value) in golden_values() {
        if metric == "online_trace" {
            let trace: String = full.diagnostics.trace.iter().map(u8::to_string).collect();
            assert_eq!(trace, value);
            continue;
        }
        let want: f64 = value.parse().unwrap();
        let got = row.get(&metric).unwrap_or_else(|| panic!("{metric} missing from metrics CSV"));
        // least-squares slope is the only floating-point path
        let tol = if metric == "trend_ho" { 1e-12 } else { 0.0 };
        assert_close(&metric, got, want, tol);
    }
}

#[test]
fn golden_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = golden_fixture(dir.path(), "a");
    let a = cmd_run(&parse_config(&path).unwrap()).unwrap();
    let b = cmd_run(&parse_config_with(&path, &Overrides { out: Some(dir.path().join("b")), ..Default::default() }).unwrap())
        .unwrap();
    for (x, y) in [
        (&a.metrics_csv, &b.metrics_csv),
        (&a.horizons_csv, &b.horizons_csv),
        (&a.runlog, &b.runlog),
        (&a.report_json, &b.report_json),
        (&a.summary, &b.summary),
    ] {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{} differs", x.display());
    }
    // overwriting the same directory reproduces the same bytes
    let before = fs::read(&a.metrics_csv).unwrap();
    cmd_run(&parse_config(&path).unwrap()).unwrap();
    assert_eq!(fs::read(&a.metrics_csv).unwrap(), before);
}

#[test]
fn serial_and_concurrent_evaluation_agree() {
    let dir = tempfile::tempdir().unwrap();
    let path = golden_fixture(dir.path(), "wide");
    let mut cfg = parse_config(&path).unwrap();
    cfg.schedule.max_in_flight = 8;
    let wide = cmd_run(&cfg).unwrap();
    cfg.schedule.max_in_flight = 1;
    cfg.output_dir = dir.path().join("serial");
    let serial = cmd_run(&cfg).unwrap();
    assert_eq!(fs::read(&wide.runlog).unwrap(), fs::read(&serial.runlog).unwrap());
    assert_eq!(fs::read(&wide.metrics_csv).unwrap(), fs::read(&serial.metrics_csv).unwrap());
}

#[test]
fn every_artifact_reparses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(&golden_fixture(dir.path(), "out")).unwrap();
    let bundle = cmd_run(&cfg).unwrap();
    let full = bundle.verify().unwrap();
    assert_eq!(full.manifest.horizons, [1, 2, 5]);
    assert_eq!(read_horizons_csv(&bundle.horizons_csv).unwrap().len(), 3);
    let summary = fs::read_to_string(&bundle.summary).unwrap();
    assert!(summary.contains("Pattern: "));
    assert!(summary.contains("Preference: "));
    assert!(summary.contains("Interpretation: "));
    assert_eq!(ReportBundle::in_dir(&cfg.output_dir), bundle);
}

#[test]
fn missing_dataset_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let path = golden_fixture(dir.path(), "out");
    fs::remove_file(dir.path().join("golden.jsonl")).unwrap();
    let err = parse_config(&path).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn malformed_dataset_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let path = golden_fixture(dir.path(), "out");
    let cfg = parse_config(&path).unwrap();
    fs::write(dir.path().join("golden.jsonl"), "{\"id\": \"x\"}\n").unwrap();
    let err = cmd_run(&cfg).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn scripted_run_stays_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(&golden_fixture(dir.path(), "out")).unwrap();
    let gateway = build_gateway(&cfg.gateway).unwrap().with_recorder();
    assert!(!gateway.is_remote());
    let plan = build_plan(&cfg).unwrap();
    cmd_run_with(&cfg, &plan, &gateway).unwrap();
    let calls = gateway.recorded_calls();
    assert_eq!(calls.len(), 20);
    let full = FullReport::read(&cfg.output_dir.join("report.json")).unwrap();
    let recorded: u64 = calls.iter().map(|c| c.result.prompt_tokens + c.result.completion_tokens).sum();
    assert_eq!(full.diagnostics.tokens_total, recorded);
    assert_eq!(full.online_usage.call_count, 20);
    // 20 snapshots x (5 hold-out + up to 20 retro tasks)
    let eval = full.eval_usage.unwrap();
    assert_eq!(eval.call_count, 20 * 5 + (1..=20).sum::<u64>());
}

#[test]
fn metrics_recompute_matches_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = golden_fixture(dir.path(), "out");
    let cfg = parse_config(&path).unwrap();
    let bundle = cmd_run(&cfg).unwrap();
    let csv = fs::read(&bundle.metrics_csv).unwrap();
    let report = fs::read(&bundle.report_json).unwrap();
    cmd_metrics(&cfg).unwrap();
    assert_eq!(fs::read(&bundle.metrics_csv).unwrap(), csv);
    assert_eq!(fs::read(&bundle.report_json).unwrap(), report);

    let cfg = parse_config_with(&path, &Overrides { horizons: Some(vec![3, 4]), ..Default::default() }).unwrap();
    cmd_metrics(&cfg).unwrap();
    let row = &read_metrics_csv(&bundle.metrics_csv).unwrap()[0];
    assert!(row.get("bwt_t3").is_some() && row.get("f_exact_t4").is_some());
    assert!(row.values.iter().all(|(c, _)| c != "bwt_t1"));
    bundle.verify().unwrap();
}

#[test]
fn post_update_baseline_uses_retro_diagonal() {
    let dir = tempfile::tempdir().unwrap();
    let path = golden_fixture(dir.path(), "out");
    let mut cfg = parse_config(&path).unwrap();
    cmd_run(&cfg).unwrap();
    cfg.schedule.baseline = Baseline::PostUpdate;
    let bundle = cmd_metrics(&cfg).unwrap();
    let full = bundle.verify().unwrap();
    assert_eq!(full.manifest.baseline, Baseline::PostUpdate);
    // under the post-update snapshot c, every re-evaluation returns HINTS[c-1],
    // so BWT(t) is the mean of HINTS[τ+t-1] - HINTS[τ-1]
    let h = common::HINTS;
    for t in [1usize, 2, 5] {
        let terms: Vec<i64> = (1..=20 - t).map(|tau| i64::from(h[tau + t - 1]) - i64::from(h[tau - 1])).collect();
        let want = terms.iter().sum::<i64>() as f64 / terms.len() as f64;
        assert_eq!(full.diagnostics.horizon(t).unwrap().bwt, Some(want), "t={t}");
    }
}

fn run_variant(dir: &Path, name: &str, policy: &str) -> std::path::PathBuf {
    let sub = dir.join(name);
    fs::create_dir_all(&sub).unwrap();
    let path = golden_fixture(&sub, "out");
    let text = fs::read_to_string(&path).unwrap().replace("id = \"exp_recent\"", &format!("id = \"{policy}\""));
    fs::write(&path, text).unwrap();
    cmd_run(&parse_config(&path).unwrap()).unwrap().dir
}

#[test]
fn compare_identical_bundles_ties_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_variant(dir.path(), "a", "exp_recent");
    let out = dir.path().join("cmp");
    let cmp = cmd_compare(&[a.clone(), a], Some(&out), Normalization::MinMax, None).unwrap();
    for p in &cmp.profiles {
        for d in Dimension::ALL {
            let s = p.get(d);
            if s.score.is_some() {
                assert_eq!(s.rank, Some(1), "{d:?}");
                assert_eq!(s.score, Some(0.5));
            }
        }
    }
    assert_eq!(cmp.pareto.len(), 2);
    for f in ["comparison.csv", "comparison.txt", "comparison.json"] {
        assert!(out.join(f).is_file());
    }
    let text = fs::read_to_string(out.join("comparison.txt")).unwrap();
    assert!(text.contains("Pareto survivors"));
}

#[test]
fn compare_runs_of_two_policies() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_variant(dir.path(), "a", "exp_recent");
    let b = run_variant(dir.path(), "b", "memory_free");
    let cmp = cmd_compare(&[a, b], None, Normalization::Rank, None).unwrap();
    assert_eq!(cmp.labels.len(), 2);
    let online = |i: usize| cmp.profiles[i].get(Dimension::Online).rank.unwrap();
    // the memory-free run never sees a hint and answers nothing correctly
    assert_eq!(cmp.profiles[1].method, "memory_free");
    assert!(online(0) <= online(1));
}

#[test]
fn compare_rejects_mismatched_datasets() {
    let mut b = report_from("m2", &[1, 0, 1], None);
    b.dataset = "other".into();
    let err = compare_reports(&[report_from("m1", &[1, 1, 0], None), b], Normalization::MinMax, None).unwrap_err();
    assert!(err.to_string().contains("different datasets"), "{err}");
    assert!(compare_reports(&[report_from("m1", &[1], None)], Normalization::MinMax, None).is_err());
}

#[test]
fn compare_with_one_dominant_method_keeps_one_survivor() {
    let mut good = report_from("good", &[1, 1, 1, 1], None);
    let mut bad = report_from("bad", &[0, 1, 0, 0], None);
    good.tokens_total = 10;
    bad.tokens_total = 20;
    let objectives = [Objective::natural(ObjectiveMetric::OnlineAcc), Objective::natural(ObjectiveMetric::TokensTotal)];
    let cmp = compare_reports(&[bad, good], Normalization::MinMax, Some(&objectives)).unwrap();
    assert_eq!(cmp.pareto, ["good"]);
}

fn dense_rows(rng: &mut Xorshift, n: usize) -> Vec<Vec<u8>> {
    (0..n).map(|_| (0..n).map(|_| rng.bit(1, 2)).collect()).collect()
}

fn report_from(method: &str, trace: &[u8], rows: Option<&[Vec<u8>]>) -> DiagnosticReport {
    let t = OnlineTrace::new(trace.to_vec()).unwrap();
    let matrix = rows.map(|r| EvalMatrix::dense(trace, r).unwrap());
    diagnose(DiagnosticInputs {
        method,
        dataset: "d",
        trace: &t,
        holdout: vec![],
        matrix: matrix.as_ref(),
        horizons: &[1, 2],
        efficiency: EfficiencySummary::default(),
        thresholds: &Thresholds::default(),
    })
    .unwrap()
}

fn oracle_matrix(trace: &[u8], rows: &[Vec<u8>]) -> OracleMatrix {
    let n = trace.len();
    OracleMatrix {
        baseline: trace.iter().map(|&a| Some(a)).collect(),
        cells: (0..n).map(|tau| (0..n).map(|c| (c >= tau).then(|| rows[tau][c])).collect()).collect(),
    }
}

#[test]
fn three_method_scores_match_oracle_values() {
    let mut rng = Xorshift(0x5eed_0001);
    let n = 8;
    let mut reports = Vec::new();
    let mut oracle = Vec::new();
    for m in 0..3 {
        let trace: Vec<u8> = (0..n).map(|_| rng.bit(1, 2)).collect();
        let rows = dense_rows(&mut rng, n);
        reports.push(report_from(&format!("m{m}"), &trace, Some(&rows)));
        oracle.push(oracle_metrics(&trace, Some(&oracle_matrix(&trace, &rows)), &[1, 2]));
    }
    let cmp = compare_reports(&reports, Normalization::MinMax, None).unwrap();

    let minmax = |vals: Vec<f64>, higher: bool| -> Vec<f64> {
        let v: Vec<f64> = vals.iter().map(|&x| if higher { x } else { -x }).collect();
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        v.iter().map(|x| if hi == lo { 0.5 } else { (x - lo) / (hi - lo) }).collect()
    };
    let online_metrics = [
        (minmax(oracle.iter().map(|o| o.online_acc).collect(), true)),
        (minmax(oracle.iter().map(|o| o.ped).collect(), false)),
        (minmax(oracle.iter().map(|o| o.mer).collect(), true)),
        (minmax(oracle.iter().map(|o| o.r_min).collect(), false)),
    ];
    let iv: Vec<f64> = oracle.iter().map(|o| o.horizons[0].1.unwrap()).collect();
    let transfer_metrics = [
        minmax(iv.clone(), true),
        minmax(iv, true),
        minmax(oracle.iter().map(|o| o.horizons[1].1.unwrap()).collect(), true),
    ];
    for i in 0..3 {
        let want_online = online_metrics.iter().map(|m| m[i]).sum::<f64>() / 4.0;
        let want_transfer = transfer_metrics.iter().map(|m| m[i]).sum::<f64>() / 3.0;
        let p = &cmp.profiles[i];
        assert_close("online", p.get(Dimension::Online).score.unwrap(), want_online, 1e-12);
        assert_close("transfer", p.get(Dimension::Transfer).score.unwrap(), want_transfer, 1e-12);
        assert_eq!(p.get(Dimension::Holdout).score, None);
    }
}

#[test]
fn stratified_split_holds_out_from_the_pool() {
    let dir = tempfile::tempdir().unwrap();
    let tasks: Vec<Task> = (0..10)
        .map(|i| Task::new(format!("t{i}"), format!("key=K{i}"), format!("K{i}")).with_category(if i < 8 { "a" } else { "b" }))
        .collect();
    write_jsonl(&dir.path().join("pool.jsonl"), &tasks);
    fs::write(
        dir.path().join("cfg.toml"),
        r#"
[dataset]
id = "pool"
path = "pool.jsonl"
split = { mode = "stratified_sample", size = 5, seed = 3 }

[policy]
id = "memory_free"

[gateway.script]
default = "x"

[schedule]
n_checkpoints = 5
"#,
    )
    .unwrap();
    let plan = build_plan(&parse_config(&dir.path().join("cfg.toml")).unwrap()).unwrap();
    let held = &plan.holdout_sets[0];
    assert_eq!(held.len(), 5);
    assert_eq!(held.tasks.iter().filter(|t| t.category == "a").count(), 4);
    assert_eq!(plan.stream.len(), 5);
    held.check_disjoint(&plan.stream).unwrap();
    assert_eq!(plan.checkpoints, [1, 2, 3, 4, 5]);
    assert_eq!(plan.horizons, [1, 2, 3, 4]);
}

#[test]
fn extra_holdout_sets_get_suffixed_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = golden_fixture(dir.path(), "out");
    write_jsonl(&dir.path().join("ood.jsonl"), &[Task::new("o1", "key=O1", "O1"), Task::new("o2", "key=O2", "O2")]);
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("\n[[holdout]]\nname = \"ood\"\npath = \"ood.jsonl\"\n");
    fs::write(&path, text).unwrap();
    let bundle = cmd_run(&parse_config(&path).unwrap()).unwrap();
    let row = &read_metrics_csv(&bundle.metrics_csv).unwrap()[0];
    assert_eq!(row.get("holdout_acc_ood"), Some(1.0));
    assert!(row.get("trend_ho_ood").is_some());
    let full = bundle.verify().unwrap();
    assert_eq!(full.diagnostics.holdout.len(), 2);
}
