use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{EvalMatrix, HoldoutTrace};
use crate::error::{Error, Result};
use crate::gateway::UsageLedger;
use crate::policies::MemoryState;
use crate::stream::DistributionTag;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub task_id: String,
    pub prediction: String,
    /// A(τ), 0 or 1.
    pub correct: u8,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    pub tries_used: usize,
    pub calls: u64,
    pub retries: u64,
    pub embed_calls: u64,
}

impl StepRecord {
    pub fn usage(&self) -> UsageLedger {
        UsageLedger {
            prompt_tokens_total: self.prompt_tokens,
            completion_tokens_total: self.completion_tokens,
            call_count: self.calls,
            wall_clock_total: self.latency_ms,
            retry_count: self.retries,
            embed_calls: self.embed_calls,
        }
    }
}

/// Post-update memory after `step_index`, with the usage accumulated since
/// the previous snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step_index: usize,
    pub state: MemoryState,
    pub ledger_delta: UsageLedger,
}

impl Snapshot {
    /// Re-read the stored state and check that it serializes back to the same
    /// bytes.
    pub fn restore(&self) -> Result<MemoryState> {
        let text = self.state.to_json();
        let restored = MemoryState::from_json(&text).map_err(|e| Error::Snapshot {
            step: self.step_index,
            message: e.to_string(),
        })?;
        if restored.to_json() != text {
            return Err(Error::Snapshot {
                step: self.step_index,
                message: "state does not serialize back to the same bytes".into(),
            });
        }
        Ok(restored)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutRecord {
    pub checkpoint: usize,
    pub set: String,
    pub tag: DistributionTag,
    pub value: f64,
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetroRecord {
    pub checkpoint: usize,
    pub task_index: usize,
    pub task_id: String,
    pub correct: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Step(StepRecord),
    Snapshot(Snapshot),
    Holdout(HoldoutRecord),
    Retro(RetroRecord),
}

impl Event {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("events serialize")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    pub snapshots: Vec<Snapshot>,
    pub holdout: Vec<HoldoutRecord>,
    pub retro: Vec<RetroRecord>,
}

impl RunLog {
    /// Events in canonical order: steps with their snapshots interleaved,
    /// then hold-out results, then retrospective results.
    pub fn events(&self) -> Vec<Event> {
        let mut out = Vec::with_capacity(self.steps.len() + self.snapshots.len() + self.holdout.len() + self.retro.len());
        let mut snaps = self.snapshots.iter().peekable();
        for s in &self.steps {
            out.push(Event::Step(s.clone()));
            while let Some(snap) = snaps.next_if(|snap| snap.step_index <= s.step) {
                out.push(Event::Snapshot(snap.clone()));
            }
        }
        out.extend(snaps.cloned().map(Event::Snapshot));
        out.extend(self.holdout.iter().cloned().map(Event::Holdout));
        out.extend(self.retro.iter().cloned().map(Event::Retro));
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for e in self.events() {
            s.push_str(&e.to_line());
            s.push('\n');
        }
        s
    }

    pub fn push(&mut self, event: Event) {
        match event {
            Event::Step(s) => self.steps.push(s),
            Event::Snapshot(s) => self.snapshots.push(s),
            Event::Holdout(h) => self.holdout.push(h),
            Event::Retro(r) => self.retro.push(r),
        }
    }

    pub fn from_jsonl(text: &str, origin: &Path) -> Result<Self> {
        let mut log = RunLog::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let event: Event = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            log.push(event);
        }
        log.validate()?;
        Ok(log)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading run log {}", path.display()), e))?;
        RunLog::from_jsonl(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.steps.iter().enumerate() {
            if s.step != i + 1 {
                return Err(Error::Invariant(format!("step record {} carries step {}", i + 1, s.step)));
            }
            if s.correct > 1 {
                return Err(Error::Invariant(format!("step {} has non-binary correctness", s.step)));
            }
        }
        if self.snapshots.windows(2).any(|w| w[0].step_index >= w[1].step_index) {
            return Err(Error::Invariant("snapshots are not in increasing step order".into()));
        }
        if let Some(s) = self.snapshots.iter().find(|s| s.step_index == 0 || s.step_index > self.steps.len()) {
            return Err(Error::Invariant(format!("snapshot at step {} has no step record", s.step_index)));
        }
        Ok(())
    }

    pub fn online_trace(&self) -> Vec<u8> {
        self.steps.iter().map(|s| s.correct).collect()
    }

    pub fn checkpoints(&self) -> Vec<usize> {
        self.snapshots.iter().map(|s| s.step_index).collect()
    }

    /// Sum over committed steps only.
    pub fn online_usage(&self) -> UsageLedger {
        self.steps.iter().map(StepRecord::usage).fold(UsageLedger::default(), |a, b| a + b)
    }

    /// Hold-out traces per set, in first-seen set order.
    pub fn holdout_traces(&self) -> Result<Vec<(String, DistributionTag, HoldoutTrace)>> {
        let mut sets: Vec<(String, DistributionTag, Vec<(usize, f64)>)> = Vec::new();
        for h in &self.holdout {
            match sets.iter_mut().find(|(n, _, _)| *n == h.set) {
                Some((_, _, pts)) => pts.push((h.checkpoint, h.value)),
                None => sets.push((h.set.clone(), h.tag, vec![(h.checkpoint, h.value)])),
            }
        }
        sets.into_iter()
            .map(|(n, tag, pts)| Ok((n, tag, HoldoutTrace::new(pts)?)))
            .collect()
    }

    /// Retrospective results over the snapshot columns, with the online
    /// trace as baseline.
    pub fn eval_matrix(&self) -> Result<EvalMatrix> {
        let mut m = EvalMatrix::new(self.checkpoints(), &self.online_trace())?;
        for r in &self.retro {
            m.set(r.task_index, r.checkpoint, r.correct)?;
        }
        Ok(m)
    }
}

/// Write via a sibling temp file and rename, so readers never see a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let ctx = || format!("writing {}", path.display());
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(ctx(), e))?;
    f.write_all(bytes).map_err(|e| Error::io(ctx(), e))?;
    f.sync_all().map_err(|e| Error::io(ctx(), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(ctx(), e))
}

/// Everything needed to continue an interrupted online pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResumeToken {
    pub method: String,
    pub dataset: String,
    pub stream_len: usize,
    pub last_completed_step: usize,
    /// Most recent snapshot step at or before `last_completed_step`.
    pub snapshot_step: Option<usize>,
    pub state: MemoryState,
}

impl ResumeToken {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading resume token {}", path.display()), e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }
}
