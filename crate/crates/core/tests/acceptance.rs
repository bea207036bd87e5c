//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::fs;
use std::sync::Arc;
use std::time::Instant;

use common::{golden_fixture, golden_values, write_jsonl, Xorshift};
use seqmem::diagnostics::oracle::{oracle_metrics, OracleMatrix};
use seqmem::diagnostics::{
    bwt, classify_trajectory, cumulative_curve, efficiency_summary, forgetting_approx, forgetting_exact, mer,
    online_acc, ped, r_min, EvalMatrix, OnlineTrace, Thresholds,
};
use seqmem::gateway::{Gateway, GenerationRequest, GenerationResult, Generator, HashingEmbedder, ScriptRule, ScriptedModel};
use seqmem::policies::{MemoryPayload, Policy, PolicyConfig, PolicyKind};
use seqmem::report::{
    build_plan, cmd_resume_with, cmd_run, cmd_run_with, parse_config, parse_config_with, read_metrics_csv, FullReport,
    Overrides,
};
use seqmem::runner::{run_sequential, RunPlan};
use seqmem::stream::{build_stream, split_stratified, split_tail, Task};
use seqmem::Error;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn opt(r: seqmem::Result<f64>) -> Option<f64> {
    match r {
        Ok(v) => Some(v),
        Err(Error::EmptyHorizon { .. }) => None,
        Err(e) => panic!("unexpected metric error: {e}"),
    }
}

struct Case {
    trace: Vec<u8>,
    rows: Option<Vec<Vec<u8>>>,
    grid: Vec<usize>,
}

fn generate_cases() -> Vec<Case> {
    let mut rng = Xorshift(0x00c0_ffee_1234_5678);
    let mut cases = Vec::new();
    for _ in 0..1000 {
        let t = 1 + rng.below(200) as usize;
        // vary the success rate so long runs of hits and misses both occur
        let p = 1 + rng.below(9);
        cases.push(Case {
            trace: (0..t).map(|_| rng.bit(p, 10)).collect(),
            rows: None,
            grid: vec![],
        });
    }
    for _ in 0..200 {
        let t = 2 + rng.below(49) as usize;
        let p = 1 + rng.below(9);
        let trace: Vec<u8> = (0..t).map(|_| rng.bit(p, 10)).collect();
        let rows: Vec<Vec<u8>> = (0..t).map(|_| (0..t).map(|_| rng.bit(p, 10)).collect()).collect();
        let mut grid: Vec<usize> = (1..t).filter(|_| rng.below(3) == 0).collect();
        if grid.is_empty() {
            grid.push(1 + rng.below(t as u64 - 1) as usize);
        }
        cases.push(Case {
            trace,
            rows: Some(rows),
            grid,
        });
    }
    cases
}

fn oracle_matrix(trace: &[u8], rows: &[Vec<u8>]) -> OracleMatrix {
    let n = trace.len();
    OracleMatrix {
        baseline: trace.iter().map(|&a| Some(a)).collect(),
        cells: (0..n).map(|tau| (0..n).map(|c| (c >= tau).then(|| rows[tau][c])).collect()).collect(),
    }
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let cases = generate_cases();
    let mut compared = 0usize;
    for (i, case) in cases.iter().enumerate() {
        let curve = cumulative_curve(&OnlineTrace::new(case.trace.clone()).unwrap());
        let m = case.rows.as_ref().map(|r| (EvalMatrix::dense(&case.trace, r).unwrap(), oracle_matrix(&case.trace, r)));
        let o = oracle_metrics(&case.trace, m.as_ref().map(|x| &x.1), &case.grid);
        check(curve.values() == o.curve.as_slice(), || format!("case {i}: cumulative curve differs"))?;
        let got = [online_acc(&curve), ped(&curve), mer(&curve), r_min(&curve)];
        let want = [o.online_acc, o.ped, o.mer, o.r_min];
        check(got == want, || format!("case {i}: online metrics {got:?} != oracle {want:?}"))?;
        compared += 4;
        if let Some((engine, _)) = &m {
            for &(t, b, fe, fa) in &o.horizons {
                let got = (
                    opt(bwt(engine, t)),
                    opt(forgetting_exact(engine, t)),
                    opt(forgetting_approx(engine, t, &case.grid)),
                );
                check(got == (b, fe, fa), || format!("case {i}, t={t}: {got:?} != oracle {:?}", (b, fe, fa)))?;
                compared += 3;
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    check(secs < 30.0, || format!("took {secs:.1} s"))?;
    Ok(format!("1000 traces + 200 matrices, {compared} values equal, {secs:.2} s"))
}

fn criterion_2() -> Outcome {
    let mut checked = 0usize;
    for (i, case) in generate_cases().iter().enumerate() {
        let curve = cumulative_curve(&OnlineTrace::new(case.trace.clone()).unwrap());
        let v = curve.values();
        let range = v.iter().copied().fold(f64::MIN, f64::max) - v.iter().copied().fold(f64::MAX, f64::min);
        let (p, m, r) = (ped(&curve), mer(&curve), r_min(&curve));
        check((p + m - range).abs() <= 1e-12, || format!("case {i}: PED + MER != range"))?;
        check(p >= 0.0 && m >= 0.0, || format!("case {i}: negative PED/MER"))?;
        check(r > 0.0 && r <= 1.0, || format!("case {i}: r_min {r}"))?;
        checked += 1;
        let Some(rows) = &case.rows else { continue };
        let em = EvalMatrix::dense(&case.trace, rows).unwrap();
        let t_len = case.trace.len();
        // every horizon, under the case grid and under the full grid
        let full: Vec<usize> = (1..t_len).collect();
        for grid in [&case.grid, &full] {
            for t in 1..t_len {
                let b = opt(bwt(&em, t)).unwrap();
                let fe = opt(forgetting_exact(&em, t)).unwrap();
                let fa = opt(forgetting_approx(&em, t, grid)).unwrap();
                check((-1.0..=1.0).contains(&b), || format!("case {i} t={t}: BWT {b}"))?;
                check(fe >= 0.0 && fa >= 0.0, || format!("case {i} t={t}: negative forgetting"))?;
                check(fe + b >= -1e-12, || format!("case {i} t={t}: F + BWT = {}", fe + b))?;
                check(fa <= fe + 1e-12, || format!("case {i} t={t}: F_approx {fa} > F_exact {fe}"))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} curve/horizon checks, zero violations"))
}

fn criterion_3() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    // 125 tasks, the last 25 held out; every third task is solvable
    let tasks: Vec<Task> = (1..=125)
        .map(|i| {
            let prompt = if i % 3 == 0 { format!("key=K{i} solvable") } else { format!("key=K{i}") };
            Task::new(format!("t{i}"), prompt, format!("K{i}"))
        })
        .collect();
    write_jsonl(&dir.path().join("null.jsonl"), &tasks);
    fs::write(
        dir.path().join("null.toml"),
        r#"output_dir = "out"

[dataset]
id = "null"
path = "null.jsonl"

[policy]
id = "memory_free"

[gateway.script]
default = "WRONG"

[[gateway.script.rules]]
pattern = 'key=(\w+) solvable'
response = "$1"

[schedule]
n_checkpoints = 10
"#,
    )
    .map_err(|e| e.to_string())?;
    let cfg = parse_config(&dir.path().join("null.toml")).map_err(|e| e.to_string())?;
    let bundle = cmd_run(&cfg).map_err(|e| e.to_string())?;
    let full = bundle.verify().map_err(|e| e.to_string())?;
    let r = &full.diagnostics;
    check(r.trace.len() == 100, || format!("stream has {} steps", r.trace.len()))?;
    check(!r.horizons.is_empty(), || "no horizons evaluated".into())?;
    for h in &r.horizons {
        check(h.bwt == Some(0.0), || format!("BWT({}) = {:?}", h.t, h.bwt))?;
        // exact forgetting needs every column in the window, so on a sparse
        // grid only the approximation is defined
        check(h.forgetting() == Some(0.0), || format!("F({}) = {:?}", h.t, h.forgetting()))?;
        check(h.f_exact.is_none_or(|f| f == 0.0), || format!("F_exact({}) = {:?}", h.t, h.f_exact))?;
    }
    check(r.iv == Some(0.0), || format!("IV = {:?}", r.iv))?;
    let ho = r.primary_holdout().ok_or("no hold-out")?;
    check(ho.points.iter().all(|p| p.1 == ho.points[0].1), || "hold-out trajectory is not constant".into())?;
    let trend = ho.trend_ho.ok_or("no trend")?;
    check(trend.abs() <= 1e-12, || format!("Trend_HO = {trend}"))?;
    Ok(format!("T=100, horizons {:?}: BWT = F = 0, H = {} constant, Trend_HO = {trend:e}", full.manifest.horizons, ho.points[0].1))
}

fn criterion_4() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = golden_fixture(dir.path(), "a");
    let started = Instant::now();
    let a = cmd_run(&parse_config(&path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    let b = cmd_run(
        &parse_config_with(&path, &Overrides { out: Some(dir.path().join("b")), ..Default::default() })
            .map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let row = read_metrics_csv(&a.metrics_csv).map_err(|e| e.to_string())?.remove(0);
    let trace = FullReport::read(&a.report_json).map_err(|e| e.to_string())?.diagnostics.trace;
    let mut n = 0;
    for (metric, value) in golden_values() {
        if metric == "online_trace" {
            let got: String = trace.iter().map(u8::to_string).collect();
            check(got == value, || format!("online trace {got} != {value}"))?;
            continue;
        }
        let want: f64 = value.parse().unwrap();
        let got = row.get(&metric).ok_or_else(|| format!("{metric} missing"))?;
        let tol = if metric == "trend_ho" { 1e-12 } else { 0.0 };
        check((got - want).abs() <= tol, || format!("{metric}: {got} != golden {want}"))?;
        n += 1;
    }
    for (x, y) in [(&a.metrics_csv, &b.metrics_csv), (&a.horizons_csv, &b.horizons_csv), (&a.runlog, &b.runlog)] {
        check(fs::read(x).ok() == fs::read(y).ok(), || format!("{} differs across runs", x.display()))?;
    }
    check(secs < 5.0, || format!("run took {secs:.2} s"))?;
    Ok(format!("trace + {n} golden metrics match, CSVs byte-identical, {secs:.2} s"))
}

fn criterion_5() -> Outcome {
    let tasks: Vec<Task> = (0..164).map(|i| Task::new(format!("HumanEval/{i}"), format!("p{i}"), "x")).collect();
    let (stream, holdout) = split_tail("humaneval", &tasks, 0.2).map_err(|e| e.to_string())?;
    check(stream.len() == 132 && holdout.len() == 32, || format!("{} + {}", stream.len(), holdout.len()))?;
    holdout.check_disjoint(&stream).map_err(|e| e.to_string())?;
    let pool: Vec<Task> = (0..10)
        .map(|i| Task::new(format!("q{i}"), "p", "x").with_category(if i < 8 { "big" } else { "small" }))
        .collect();
    let mut seen = Vec::new();
    for seed in 0..20 {
        let h = split_stratified("pool", &pool, 5, seed).map_err(|e| e.to_string())?;
        let big = h.tasks.iter().filter(|t| t.category == "big").count();
        let small = h.tasks.iter().filter(|t| t.category == "small").count();
        check((big, small) == (4, 1), || format!("seed {seed}: {{{big},{small}}}"))?;
        seen.push(h.tasks.iter().map(|t| t.id.clone()).collect::<Vec<_>>());
    }
    Ok(format!("164 -> 132 + 32; {{8,2}} size 5 -> {{4,1}} over 20 seeds ({} distinct samples)", {
        seen.sort();
        seen.dedup();
        seen.len()
    }))
}

fn adversarial_model() -> ScriptedModel {
    let thirty: String = (1..=30).map(|i| format!("Rule {i}: check detail {i}.\n")).collect();
    ScriptedModel::new(
        vec![
            ScriptRule::pattern(r"^# Insight extraction", thirty),
            ScriptRule::pattern(r"^# Cheatsheet curation", "Read the key and repeat it."),
            ScriptRule::pattern(r"^# Workflow induction", "Step 1: find the key.\nStep 2: repeat it."),
            ScriptRule::pattern(r"^# Self-reflection", "The key was ignored."),
            ScriptRule::pattern(r"key=(\w+) easy\s*$", "$1"),
        ],
        Some("WRONG".into()),
    )
    .unwrap()
}

fn adversarial_tasks(n: usize) -> Vec<Task> {
    let mut rng = Xorshift(0xadd5_eed5);
    (1..=n)
        .map(|i| {
            let easy = rng.bit(1, 2) == 1;
            let prompt = if easy { format!("key=K{i} easy") } else { format!("key=K{i}") };
            Task::new(format!("t{i}"), prompt, format!("K{i}"))
        })
        .collect()
}

fn criterion_6() -> Outcome {
    let tasks = adversarial_tasks(200);
    let gateway = Gateway::scripted(adversarial_model());
    let mut notes = Vec::new();
    for kind in [PolicyKind::ExpelSt, PolicyKind::ExpelMt, PolicyKind::Awm, PolicyKind::DcRs, PolicyKind::ExpRag] {
        let config = PolicyConfig::default();
        let policy = Policy::simple(kind, config).map_err(|e| e.to_string())?;
        let mut state = policy.initial_state();
        let (mut successes, mut max_rules, mut max_prov) = (0usize, 0usize, 0usize);
        for (i, task) in tasks.iter().enumerate() {
            let step = i + 1;
            let out = policy.step(&mut state, task, step, &gateway).map_err(|e| format!("{}: {e}", kind.id()))?;
            successes += usize::from(out.feedback.correct);
            max_prov = max_prov.max(out.context.provenance.len());
            check(out.context.provenance.len() <= config.k, || {
                format!("{} step {step}: {} provenance entries", kind.id(), out.context.provenance.len())
            })?;
            match &state.payload {
                MemoryPayload::Expel(s) => {
                    max_rules = max_rules.max(s.insights.len());
                    check(s.insights.len() <= config.max_num_rules, || {
                        format!("{} step {step}: {} rules", kind.id(), s.insights.len())
                    })?;
                }
                MemoryPayload::WorkflowSet(w) => check(w.workflows.len() == successes, || {
                    format!("awm step {step}: {} workflows for {successes} successes", w.workflows.len())
                })?,
                MemoryPayload::Cheatsheet(c) => check(c.history.len() == step, || {
                    format!("dc_rs step {step}: history {}", c.history.len())
                })?,
                _ => {}
            }
        }
        if matches!(kind, PolicyKind::ExpelSt | PolicyKind::ExpelMt) {
            check(max_rules == config.max_num_rules, || format!("{}: cap never reached ({max_rules})", kind.id()))?;
        }
        check(successes > 0 && successes < 200, || format!("{}: degenerate run ({successes} successes)", kind.id()))?;
        check(max_prov == config.k, || format!("{}: retrieval never filled k ({max_prov})", kind.id()))?;
        notes.push(format!("{} {successes} ok", kind.id()));
    }
    Ok(format!("200 steps each, rules <= 20 with 30 emitted, |provenance| <= 3; {}", notes.join(", ")))
}

fn criterion_7() -> Outcome {
    let tasks = adversarial_tasks(30);
    let stream = build_stream(tasks[..24].to_vec(), None).map_err(|e| e.to_string())?;
    let holdout = seqmem::stream::HoldoutSet::new(
        "h",
        "adv",
        tasks[24..].to_vec(),
        seqmem::stream::DistributionTag::InDistribution,
    )
    .map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for kind in PolicyKind::ALL {
        let config = PolicyConfig {
            batch_update_size: 2,
            induce_steps: 2,
            ..PolicyConfig::default()
        };
        let policy = Policy::simple(kind, config).map_err(|e| e.to_string())?;
        let plan = RunPlan {
            method: policy.method_id(),
            dataset: "adv".into(),
            stream: stream.clone(),
            policy,
            checkpoints: vec![8, 16, 24],
            horizons: vec![8, 16],
            holdout_sets: vec![holdout.clone()],
            replay_budget: None,
            seed: 1,
            max_in_flight: 3,
        };
        let gateway = Gateway::scripted(adversarial_model()).with_recorder();
        let out = run_sequential(&plan, &gateway, None).map_err(|e| format!("{}: {e}", kind.id()))?;
        let calls = gateway.recorded_calls();
        let recorded: u64 = calls.iter().map(|c| c.result.prompt_tokens + c.result.completion_tokens).sum();
        let summary = efficiency_summary(&out.log).tokens_total;
        check(summary == recorded, || format!("{}: summary {summary} != recorded {recorded}", kind.id()))?;
        check(out.online_usage.tokens_total() == gateway.ledger().tokens_total(), || {
            format!("{}: online ledger differs from the gateway meter", kind.id())
        })?;
        let updates = calls.iter().filter(|c| c.user_text.starts_with('#')).count();
        let expect_updates = !matches!(kind, PolicyKind::MemoryFree | PolicyKind::ExpRecent | PolicyKind::ExpRag);
        check((updates > 0) == expect_updates, || format!("{}: {updates} update/reflection calls", kind.id()))?;
        notes.push(format!("{} {recorded} tok/{} calls ({updates} update)", kind.id(), calls.len()));
    }
    Ok(notes.join(", "))
}

/// Fails hard on any request mentioning `poison`.
struct Failing {
    inner: ScriptedModel,
    poison: &'static str,
}

impl Generator for Failing {
    fn generate(&self, request: &GenerationRequest) -> seqmem::Result<GenerationResult> {
        if request.full_text().contains(self.poison) {
            return Err(Error::gateway("simulated outage", false));
        }
        self.inner.generate(request)
    }
}

fn resume_model() -> ScriptedModel {
    ScriptedModel::new(
        vec![
            ScriptRule::pattern(r"^# Insight extraction", "Check the key.\nRepeat the key verbatim."),
            ScriptRule::pattern(r"^# Self-reflection", "Look closer at the key."),
            ScriptRule::pattern(r"(?s)Look closer at the key.*---.*key=(\w+) HINT", "$1"),
        ],
        Some("WRONG".into()),
    )
    .unwrap()
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = golden_fixture(dir.path(), "full");
    let text = fs::read_to_string(&path).unwrap().replace("id = \"exp_recent\"\nk = 1", "id = \"expel_mt\"");
    fs::write(&path, text).unwrap();
    let cfg = parse_config_with(&path, &Overrides { checkpoints: Some(5), ..Default::default() }).map_err(|e| e.to_string())?;
    let plan = build_plan(&cfg).map_err(|e| e.to_string())?;
    let clean = || Gateway::new(Arc::new(resume_model()), Arc::new(HashingEmbedder::default()));
    let full = cmd_run_with(&cfg, &plan, &clean()).map_err(|e| e.to_string())?;

    let mut cut = cfg.clone();
    cut.output_dir = dir.path().join("cut");
    let failing = Gateway::new(
        Arc::new(Failing {
            inner: resume_model(),
            poison: "key=W11",
        }),
        Arc::new(HashingEmbedder::default()),
    );
    check(cmd_run_with(&cut, &plan, &failing).is_err(), || "run did not abort".into())?;
    let token = seqmem::runner::ResumeToken::read(&cut.output_dir.join(seqmem::runner::RESUME_FILE))
        .map_err(|e| e.to_string())?;
    check(token.last_completed_step == 10, || format!("aborted after step {}", token.last_completed_step))?;
    let resumed = cmd_resume_with(&cut, &plan, &clean()).map_err(|e| e.to_string())?;
    let (a, b) = (fs::read(&full.runlog).unwrap(), fs::read(&resumed.runlog).unwrap());
    check(a == b, || "resumed run log differs".into())?;
    let trace = FullReport::read(&full.report_json).map_err(|e| e.to_string())?.diagnostics.trace;
    let hits = trace.iter().filter(|&&v| v == 1).count();
    Ok(format!("abort at step 10 of 20, resumed log byte-identical ({} bytes, {hits}/20 correct)", a.len()))
}

fn criterion_9() -> Outcome {
    let th = Thresholds::default();
    let a = classify_trajectory(0.150, 0.122, 0.10, &th);
    let b = classify_trajectory(0.000, 0.486, 1.00, &th);
    check(a.is_improvement(), || format!("first exemplar -> {a}"))?;
    check(b.is_degradation(), || format!("second exemplar -> {b}"))?;
    Ok(format!("(0.150, 0.122, 0.10) -> {a} [{}]; (0.000, 0.486, 1.00) -> {b} [{}]", a.preference().label(), b.preference().label()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("metric-oracle equivalence", criterion_1),
        ("metric identities", criterion_2),
        ("null memory has null effect", criterion_3),
        ("golden end-to-end scenario", criterion_4),
        ("split regression", criterion_5),
        ("policy-config fidelity", criterion_6),
        ("ledger conservation", criterion_7),
        ("determinism and resume", criterion_8),
        ("classifier exemplars", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS  criterion {}: {name} ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  criterion {}: {name} ({why})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
