//! Browser bindings for the diagnostics engine.
//!
//! Every entry point takes and returns JSON text. The `*_json` functions are
//! plain Rust so they can be tested natively; the `#[wasm_bindgen]` wrappers
//! only convert errors into JavaScript exceptions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use wasm_bindgen::prelude::*;

use seqmem::diagnostics::{
    bwt, classify_curve, cumulative_curve, forgetting_approx, forgetting_exact, immediate_validity, mer, online_acc,
    ped, r_min, tail_variance, EvalMatrix, OnlineTrace, Thresholds,
};
use seqmem::gateway::{Gateway, ScriptRule, ScriptedModel};
use seqmem::policies::{Policy, PolicyConfig, PolicyKind};
use seqmem::report::{diagnose_log, Baseline};
use seqmem::runner::{default_horizons, make_schedule, run_sequential, RunPlan};
use seqmem::stream::{build_stream, split_tail, Task};
use seqmem::{Error, Result};

/// Policies the simulator offers; their prompts carry retrieved experiences
/// under the header the scripted model keys on.
pub const SIMULATED_POLICIES: [&str; 3] = ["memory_free", "exp_recent", "exp_rag"];

fn parse<'a, T: Deserialize<'a>>(text: &'a str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Argument(format!("bad request: {e}")))
}

fn optional(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::EmptyHorizon { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Accepts `"0110"`, `"0,1,1,0"` or `"0 1 1 0"`.
pub fn parse_trace(text: &str) -> Result<OnlineTrace> {
    let values = text
        .chars()
        .filter(|c| !c.is_whitespace() && *c != ',')
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(Error::Argument(format!("trace may only contain 0 and 1, found {other:?}"))),
        })
        .collect::<Result<Vec<u8>>>()?;
    OnlineTrace::new(values)
}

/// Curve, online metrics and trajectory label of a binary trace.
pub fn trace_metrics_json(trace: &str) -> Result<String> {
    let trace = parse_trace(trace)?;
    let curve = cumulative_curve(&trace);
    let thresholds = Thresholds::default();
    let pattern = classify_curve(&curve, &thresholds);
    Ok(json!({
        "curve": curve.values(),
        "online_acc": online_acc(&curve),
        "ped": ped(&curve),
        "mer": mer(&curve),
        "r_min": r_min(&curve),
        "tail_variance": tail_variance(&curve),
        "pattern": pattern.label(),
        "preference": pattern.preference().label(),
        "interpretation": pattern.interpretation(),
    })
    .to_string())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixRequest {
    pub online: Vec<u8>,
    /// Snapshot steps; all steps when omitted.
    #[serde(default)]
    pub columns: Option<Vec<usize>>,
    /// `[task, column, value]` cells with task ≤ column.
    pub cells: Vec<(usize, usize, u8)>,
    pub horizons: Vec<usize>,
    #[serde(default)]
    pub baseline: Baseline,
}

#[derive(Debug, Serialize)]
struct HorizonRow {
    t: usize,
    bwt: Option<f64>,
    f_exact: Option<f64>,
    f_approx: Option<f64>,
}

/// Transfer and forgetting of a re-evaluation grid at each horizon.
pub fn matrix_metrics_json(request: &str) -> Result<String> {
    let req: MatrixRequest = parse(request)?;
    let columns = req.columns.unwrap_or_else(|| (1..=req.online.len()).collect());
    let mut m = EvalMatrix::new(columns, &req.online)?;
    for &(task, column, value) in &req.cells {
        m.set(task, column, value)?;
    }
    if req.baseline == Baseline::PostUpdate {
        m = m.with_post_update_baseline();
    }
    let iv = match immediate_validity(&m) {
        Ok((t, v)) => Some((t, v)),
        Err(Error::EmptyHorizon { .. }) => None,
        Err(e) => return Err(e),
    };
    let rows = req
        .horizons
        .iter()
        .map(|&t| {
            Ok(HorizonRow {
                t,
                bwt: optional(bwt(&m, t))?,
                f_exact: optional(forgetting_exact(&m, t))?,
                f_approx: optional(forgetting_approx(&m, t, &req.horizons))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(json!({
        "iv": iv.map(|(t, v)| json!({"t": t, "value": v})),
        "horizons": rows,
    })
    .to_string())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationRequest {
    pub policy: String,
    #[serde(default = "defaults::k")]
    pub k: usize,
    pub n_tasks: usize,
    /// Chance that a task leaves behind an experience that helps later tasks.
    pub hint_rate: f64,
    /// Chance that a task is solved without any memory.
    pub easy_rate: f64,
    #[serde(default = "defaults::n_checkpoints")]
    pub n_checkpoints: usize,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn k() -> usize {
        2
    }
    pub fn n_checkpoints() -> usize {
        5
    }
}

/// Tasks are `key=S<n>` with optional HINT and EASY markers, followed by
/// hold-out tasks `key=H<n>`.
pub fn simulated_tasks(n_tasks: usize, hint_rate: f64, easy_rate: f64, seed: u64) -> Result<Vec<Task>> {
    if n_tasks < 5 {
        return Err(Error::Argument("simulate at least 5 tasks".into()));
    }
    for (name, p) in [("hint_rate", hint_rate), ("easy_rate", easy_rate)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Argument(format!("{name} must lie in [0, 1], got {p}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks: Vec<Task> = (1..=n_tasks)
        .map(|n| {
            let mut prompt = format!("key=S{n}");
            if rng.random_bool(hint_rate) {
                prompt.push_str(" HINT");
            }
            if rng.random_bool(easy_rate) {
                prompt.push_str(" EASY");
            }
            Task::new(format!("s{n}"), prompt, format!("S{n}"))
        })
        .collect();
    let holdout = n_tasks.div_ceil(4);
    tasks.extend((1..=holdout).map(|n| Task::new(format!("h{n}"), format!("key=H{n}"), format!("H{n}"))));
    Ok(tasks)
}

/// Solves EASY questions outright and any question once a HINT-bearing
/// experience is retrieved into the prompt.
pub fn simulated_model() -> ScriptedModel {
    ScriptedModel::new(
        vec![
            ScriptRule::pattern(r"key=(\w+)( HINT)? EASY\s*\z", "$1"),
            ScriptRule::pattern(r"(?s)Relevant past experience:.*HINT.*---.*key=(\w+)", "$1"),
        ],
        Some("WRONG".into()),
    )
    .expect("simulator rules compile")
}

/// Run a scripted stream end to end in memory and return its diagnostics.
pub fn simulate_json(request: &str) -> Result<String> {
    let req: SimulationRequest = parse(request)?;
    if !SIMULATED_POLICIES.contains(&req.policy.as_str()) {
        return Err(Error::Argument(format!(
            "policy must be one of {}",
            SIMULATED_POLICIES.join(", ")
        )));
    }
    let kind: PolicyKind = req.policy.parse()?;
    let config = PolicyConfig { k: req.k, ..PolicyConfig::default() };
    let policy = Policy::simple(kind, config)?;
    let tasks = simulated_tasks(req.n_tasks, req.hint_rate, req.easy_rate, req.seed)?;
    let (stream_part, holdout) = split_tail("sim", &tasks, 0.2)?;
    let stream = build_stream(stream_part.tasks().to_vec(), None)?;
    let checkpoints = make_schedule(stream.len(), req.n_checkpoints)?;
    let horizons = default_horizons(&checkpoints);
    let plan = RunPlan {
        method: policy.method_id(),
        dataset: "sim".into(),
        stream,
        policy,
        checkpoints,
        horizons,
        holdout_sets: vec![holdout],
        replay_budget: None,
        seed: req.seed,
        max_in_flight: 1,
    };
    let gateway = Gateway::scripted(simulated_model());
    let outcome = run_sequential(&plan, &gateway, None)?;
    let report = diagnose_log(
        &outcome.log,
        &plan.method,
        &plan.dataset,
        &plan.horizons,
        &Thresholds::default(),
        Baseline::Online,
    )?;
    Ok(json!({
        "prompts": plan.stream.tasks().iter().map(|t| &t.prompt).collect::<Vec<_>>(),
        "checkpoints": plan.checkpoints,
        "report": report,
        "preference": report.pattern.preference().label(),
        "tokens": outcome.online_usage.tokens_total(),
    })
    .to_string())
}

fn to_js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = traceMetrics)]
pub fn trace_metrics(trace: &str) -> std::result::Result<String, JsError> {
    to_js(trace_metrics_json(trace))
}

#[wasm_bindgen(js_name = matrixMetrics)]
pub fn matrix_metrics(request: &str) -> std::result::Result<String, JsError> {
    to_js(matrix_metrics_json(request))
}

#[wasm_bindgen]
pub fn simulate(request: &str) -> std::result::Result<String, JsError> {
    to_js(simulate_json(request))
}
