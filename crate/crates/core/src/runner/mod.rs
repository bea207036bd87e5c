//! The sequential protocol: one pass over the stream with incremental memory
//! updates and checkpoint snapshots, followed by hold-out and retrospective
//! evaluation of the frozen snapshots.
//!
//! Evaluation always runs after the online pass, against stored snapshots,
//! so it cannot influence any online prediction.

mod eval;
mod log;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gateway::{Gateway, UsageLedger};
use crate::policies::Policy;
use crate::stream::{HoldoutSet, TaskStream};

pub use eval::{evaluate_holdout_at, evaluate_retrospective, replay_selection};
pub use log::{
    write_atomic, Event, HoldoutRecord, ResumeToken, RetroRecord, RunLog, Snapshot, StepRecord,
};

pub const RUNLOG_FILE: &str = "runlog.jsonl";
pub const RESUME_FILE: &str = "resume.json";

/// `n` evenly spaced steps ending at `t`: c_i = ⌈i·t/n⌉.
pub fn make_schedule(t: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > t {
        return Err(Error::Argument(format!(
            "number of checkpoints must be in [1, {t}], got {n}"
        )));
    }
    Ok((1..=n).map(|i| (i * t).div_ceil(n)).collect())
}

/// Every positive gap between two checkpoints.
pub fn default_horizons(checkpoints: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = checkpoints
        .iter()
        .enumerate()
        .flat_map(|(i, &a)| checkpoints[i + 1..].iter().map(move |&b| b - a))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

#[derive(Debug, Clone)]
pub struct RunPlan {
    pub method: String,
    pub dataset: String,
    pub stream: TaskStream,
    pub policy: Policy,
    pub checkpoints: Vec<usize>,
    pub horizons: Vec<usize>,
    pub holdout_sets: Vec<HoldoutSet>,
    /// Most earlier tasks re-evaluated per checkpoint; `None` means all.
    pub replay_budget: Option<usize>,
    pub seed: u64,
    pub max_in_flight: usize,
}

impl RunPlan {
    pub fn validate(&self) -> Result<()> {
        let t = self.stream.len();
        if t == 0 {
            return Err(Error::Argument("the task stream is empty".into()));
        }
        let cps = &self.checkpoints;
        if cps.is_empty() || cps.windows(2).any(|w| w[0] >= w[1]) || cps[0] == 0 || cps[cps.len() - 1] != t {
            return Err(Error::Argument(format!(
                "checkpoints must be strictly increasing steps in [1, {t}] ending at {t}"
            )));
        }
        if self.horizons.windows(2).any(|w| w[0] >= w[1]) || self.horizons.iter().any(|&h| h == 0 || h >= t) {
            return Err(Error::Argument(format!(
                "horizons must be strictly increasing and within [1, {}]",
                t - 1
            )));
        }
        if self.replay_budget == Some(0) {
            return Err(Error::Argument("replay budget must be at least 1".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Argument("max_in_flight must be at least 1".into()));
        }
        for h in &self.holdout_sets {
            h.check_disjoint(&self.stream)?;
        }
        self.policy.config.validate()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: RunLog,
    pub online_usage: UsageLedger,
    pub eval_usage: UsageLedger,
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn log_path(&self) -> PathBuf {
        self.dir.join(RUNLOG_FILE)
    }

    fn token_path(&self) -> PathBuf {
        self.dir.join(RESUME_FILE)
    }

    fn append(&self, events: &[Event]) -> Result<()> {
        let path = self.log_path();
        let mut f = OpenOptions::new()
            .append(true)
            .create(true)
            .open(&path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let mut buf = String::new();
        for e in events {
            buf.push_str(&e.to_line());
            buf.push('\n');
        }
        f.write_all(buf.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| Error::io(format!("appending to {}", path.display()), e))
    }
}

/// Run the whole protocol from scratch. With `out` set, the run log is
/// streamed to `out/runlog.jsonl` and a resume token is kept current after
/// every step, so an aborted run can be continued with [`resume_run`].
pub fn run_sequential(plan: &RunPlan, gateway: &Gateway, out: Option<&Path>) -> Result<RunOutcome> {
    plan.validate()?;
    let out = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
            let o = Output { dir: dir.to_path_buf() };
            write_atomic(&o.log_path(), b"")?;
            if o.token_path().exists() {
                fs::remove_file(o.token_path()).map_err(|e| Error::io("removing stale resume token", e))?;
            }
            Some(o)
        }
        None => None,
    };
    let state = plan.policy.initial_state();
    drive(plan, gateway, out.as_ref(), RunLog::default(), state)
}

/// Continue a run from `out/resume.json`, discarding any log lines written
/// after the last completed step.
pub fn resume_run(plan: &RunPlan, gateway: &Gateway, out: &Path) -> Result<RunOutcome> {
    plan.validate()?;
    let o = Output { dir: out.to_path_buf() };
    let token = ResumeToken::read(&o.token_path())?;
    if token.method != plan.method || token.dataset != plan.dataset || token.stream_len != plan.stream.len() {
        return Err(Error::Config(format!(
            "resume token belongs to {}/{} with {} steps, not {}/{} with {}",
            token.method,
            token.dataset,
            token.stream_len,
            plan.method,
            plan.dataset,
            plan.stream.len()
        )));
    }
    let j = token.last_completed_step;
    let text = fs::read_to_string(o.log_path())
        .map_err(|e| Error::io(format!("reading {}", o.log_path().display()), e))?;
    let mut log = RunLog::default();
    for (i, line) in text.lines().enumerate() {
        // a torn trailing line is expected after a crash
        let Ok(event) = serde_json::from_str::<Event>(line) else {
            if i + 1 == text.lines().count() {
                break;
            }
            return Err(Error::Parse {
                path: o.log_path(),
                line: i + 1,
                message: "unreadable run log line".into(),
            });
        };
        match &event {
            Event::Step(s) if s.step <= j => log.push(event),
            Event::Snapshot(s) if s.step_index <= j => log.push(event),
            _ => {}
        }
    }
    log.validate()?;
    if log.steps.len() != j {
        return Err(Error::Invariant(format!(
            "resume token says {j} steps completed but the run log holds {}",
            log.steps.len()
        )));
    }
    for (rec, task) in log.steps.iter().zip(plan.stream.tasks()) {
        if rec.task_id != task.id {
            return Err(Error::Invariant(format!(
                "run log step {} is task {:?} but the stream has {:?}",
                rec.step, rec.task_id, task.id
            )));
        }
    }
    if log.checkpoints() != plan.checkpoints.iter().copied().filter(|&c| c <= j).collect::<Vec<_>>() {
        return Err(Error::Config("checkpoint schedule differs from the interrupted run".into()));
    }
    log.write(&o.log_path())?;
    drive(plan, gateway, Some(&o), log, token.state)
}

fn drive(
    plan: &RunPlan,
    gateway: &Gateway,
    out: Option<&Output>,
    mut log: RunLog,
    mut state: crate::policies::MemoryState,
) -> Result<RunOutcome> {
    let start = log.steps.len() + 1;
    let mut since_snapshot: UsageLedger = log
        .steps
        .iter()
        .filter(|s| s.step > log.snapshots.last().map_or(0, |x| x.step_index))
        .map(StepRecord::usage)
        .fold(UsageLedger::default(), |a, b| a + b);
    for step in start..=plan.stream.len() {
        let task = plan.stream.at_step(step).expect("step within stream");
        let before = gateway.ledger();
        let clock = gateway.clock_ms();
        let outcome = plan.policy.step(&mut state, task, step, gateway)?;
        if outcome.context.provenance.len() > plan.policy.config.k {
            return Err(Error::Invariant(format!(
                "step {step} retrieved {} entries with k = {}",
                outcome.context.provenance.len(),
                plan.policy.config.k
            )));
        }
        let used = gateway.ledger() - before;
        let record = StepRecord {
            step,
            task_id: task.id.clone(),
            prediction: outcome.prediction,
            correct: u8::from(outcome.feedback.correct),
            prompt_tokens: used.prompt_tokens_total,
            completion_tokens: used.completion_tokens_total,
            latency_ms: gateway.clock_ms() - clock,
            tries_used: outcome.tries_used,
            calls: used.call_count,
            retries: used.retry_count,
            embed_calls: used.embed_calls,
        };
        since_snapshot += record.usage();
        let mut events = vec![Event::Step(record.clone())];
        log.steps.push(record);
        if plan.checkpoints.binary_search(&step).is_ok() {
            let snap = Snapshot {
                step_index: step,
                state: state.clone(),
                ledger_delta: std::mem::take(&mut since_snapshot),
            };
            events.push(Event::Snapshot(snap.clone()));
            log.snapshots.push(snap);
        }
        if let Some(o) = out {
            o.append(&events)?;
            ResumeToken {
                method: plan.method.clone(),
                dataset: plan.dataset.clone(),
                stream_len: plan.stream.len(),
                last_completed_step: step,
                snapshot_step: log.snapshots.last().map(|s| s.step_index),
                state: state.clone(),
            }
            .write(&o.token_path())?;
        }
    }
    let eval_gateway = gateway.with_fresh_ledger();
    let (holdout, retro) = eval::evaluate_all(plan, &log, &eval_gateway)?;
    log.holdout = holdout;
    log.retro = retro;
    if let Some(o) = out {
        log.write(&o.log_path())?;
    }
    Ok(RunOutcome {
        online_usage: log.online_usage(),
        eval_usage: eval_gateway.ledger(),
        log,
    })
}
