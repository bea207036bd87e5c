use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::log::{HoldoutRecord, RetroRecord, RunLog, Snapshot};
use super::RunPlan;
use crate::diagnostics::EvalMatrix;
use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::policies::{MemoryState, Policy};
use crate::stream::{HoldoutSet, Task, TaskStream};

/// Tasks re-evaluated at each checkpoint, ascending.
///
/// A seeded permutation of all steps is walked once; at each checkpoint the
/// selection is topped up with the next eligible steps (τ ≤ c) until it holds
/// `budget` tasks, and from then on it never changes. Without a budget every
/// eligible step is selected.
pub fn replay_selection(checkpoints: &[usize], budget: Option<usize>, seed: u64) -> Vec<Vec<usize>> {
    let t = checkpoints.last().copied().unwrap_or(0);
    let Some(budget) = budget.filter(|&b| b < t) else {
        return checkpoints.iter().map(|&c| (1..=c).collect()).collect();
    };
    let mut order: Vec<usize> = (1..=t).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen = BTreeSet::new();
    checkpoints
        .iter()
        .map(|&c| {
            for &tau in &order {
                if chosen.len() >= budget {
                    break;
                }
                if tau <= c {
                    chosen.insert(tau);
                }
            }
            chosen.iter().copied().collect()
        })
        .collect()
}

/// Answer `jobs` (snapshot index, task) with at most `max_in_flight`
/// concurrent requests. Results come back in job order.
fn run_jobs(
    policy: &Policy,
    states: &[MemoryState],
    jobs: &[(usize, &Task)],
    gateway: &Gateway,
    max_in_flight: usize,
) -> Result<Vec<u8>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<u8>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let workers = max_in_flight.min(jobs.len()).max(1);
    if workers == 1 {
        // no worker threads, so single-threaded targets can evaluate too
        return jobs
            .iter()
            .map(|&(snap, task)| {
                policy
                    .answer_frozen(&states[snap], task, gateway)
                    .map(|(_, fb)| u8::from(fb.correct))
            })
            .collect();
    }
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(snap, task)) = jobs.get(i) else { break };
                let r = policy
                    .answer_frozen(&states[snap], task, gateway)
                    .map(|(_, fb)| u8::from(fb.correct));
                let failed = r.is_err();
                results.lock().expect("results lock")[i] = Some(r);
                if failed {
                    // stop handing out work; already started jobs finish
                    next.store(jobs.len(), Ordering::SeqCst);
                }
            });
        }
    });
    let results = results.into_inner().expect("results lock");
    let mut out = Vec::with_capacity(jobs.len());
    for r in results {
        match r {
            Some(Ok(v)) => out.push(v),
            Some(Err(e)) => return Err(e),
            None => {}
        }
    }
    if out.len() != jobs.len() {
        return Err(Error::Invariant("evaluation stopped without reporting an error".into()));
    }
    Ok(out)
}

fn restore_all(snapshots: &[Snapshot]) -> Result<(Vec<MemoryState>, Vec<String>)> {
    let states = snapshots.iter().map(Snapshot::restore).collect::<Result<Vec<_>>>()?;
    let bytes = states.iter().map(MemoryState::to_json).collect();
    Ok((states, bytes))
}

fn check_unchanged(snapshots: &[Snapshot], states: &[MemoryState], bytes: &[String]) -> Result<()> {
    for ((snap, state), before) in snapshots.iter().zip(states).zip(bytes) {
        if state.to_json() != *before {
            return Err(Error::Invariant(format!(
                "memory state of snapshot {} changed during evaluation",
                snap.step_index
            )));
        }
    }
    Ok(())
}

/// Mean correctness of a frozen snapshot on a hold-out set.
pub fn evaluate_holdout_at(
    snapshot: &Snapshot,
    holdout: &HoldoutSet,
    policy: &Policy,
    gateway: &Gateway,
    max_in_flight: usize,
) -> Result<f64> {
    let snaps = std::slice::from_ref(snapshot);
    let (states, bytes) = restore_all(snaps)?;
    let jobs: Vec<(usize, &Task)> = holdout.tasks.iter().map(|t| (0, t)).collect();
    let got = run_jobs(policy, &states, &jobs, gateway, max_in_flight)?;
    check_unchanged(snaps, &states, &bytes)?;
    Ok(got.iter().map(|&v| f64::from(v)).sum::<f64>() / got.len() as f64)
}

fn retro_jobs<'a>(
    snapshots: &[Snapshot],
    stream: &'a TaskStream,
    budget: Option<usize>,
    seed: u64,
) -> Vec<(usize, usize, &'a Task)> {
    let cps: Vec<usize> = snapshots.iter().map(|s| s.step_index).collect();
    replay_selection(&cps, budget, seed)
        .into_iter()
        .enumerate()
        .flat_map(|(i, taus)| {
            taus.into_iter()
                .map(move |tau| (i, tau, stream.at_step(tau).expect("selected step within stream")))
        })
        .collect()
}

/// Re-evaluate earlier tasks under each snapshot. The matrix baseline is the
/// online trace from `runlog`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_retrospective(
    snapshots: &[Snapshot],
    runlog: &RunLog,
    stream: &TaskStream,
    policy: &Policy,
    gateway: &Gateway,
    replay_budget: Option<usize>,
    seed: u64,
    max_in_flight: usize,
) -> Result<EvalMatrix> {
    let (states, bytes) = restore_all(snapshots)?;
    let jobs = retro_jobs(snapshots, stream, replay_budget, seed);
    let flat: Vec<(usize, &Task)> = jobs.iter().map(|&(i, _, t)| (i, t)).collect();
    let got = run_jobs(policy, &states, &flat, gateway, max_in_flight)?;
    check_unchanged(snapshots, &states, &bytes)?;
    let mut m = EvalMatrix::new(snapshots.iter().map(|s| s.step_index).collect(), &runlog.online_trace())?;
    for (&(i, tau, _), v) in jobs.iter().zip(got) {
        m.set(tau, snapshots[i].step_index, v)?;
    }
    Ok(m)
}

/// Hold-out and retrospective evaluation for every snapshot in one job pool.
pub(super) fn evaluate_all(
    plan: &RunPlan,
    log: &RunLog,
    gateway: &Gateway,
) -> Result<(Vec<HoldoutRecord>, Vec<RetroRecord>)> {
    let snaps = &log.snapshots;
    let (states, bytes) = restore_all(snaps)?;
    let mut jobs: Vec<(usize, &Task)> = Vec::new();
    for i in 0..snaps.len() {
        for set in &plan.holdout_sets {
            jobs.extend(set.tasks.iter().map(|t| (i, t)));
        }
    }
    let n_holdout = jobs.len();
    let retro = retro_jobs(snaps, &plan.stream, plan.replay_budget, plan.seed);
    jobs.extend(retro.iter().map(|&(i, _, t)| (i, t)));
    let got = run_jobs(&plan.policy, &states, &jobs, gateway, plan.max_in_flight)?;
    check_unchanged(snaps, &states, &bytes)?;

    let mut holdout = Vec::new();
    let mut k = 0;
    for snap in snaps {
        for set in &plan.holdout_sets {
            let correct: usize = got[k..k + set.len()].iter().map(|&v| usize::from(v)).sum();
            k += set.len();
            holdout.push(HoldoutRecord {
                checkpoint: snap.step_index,
                set: set.name.clone(),
                tag: set.distribution_tag,
                value: correct as f64 / set.len() as f64,
                correct,
                total: set.len(),
            });
        }
    }
    let retro = retro
        .iter()
        .zip(&got[n_holdout..])
        .map(|(&(i, tau, task), &v)| RetroRecord {
            checkpoint: snaps[i].step_index,
            task_index: tau,
            task_id: task.id.clone(),
            correct: v,
        })
        .collect();
    Ok((holdout, retro))
}
