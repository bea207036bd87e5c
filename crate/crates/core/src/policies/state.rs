use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::EmbeddingVector;

/// One processed task as stored by experience-replay memories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    /// Step index at which the experience was added.
    pub step: usize,
    pub task_id: String,
    pub prompt: String,
    pub prediction: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredExperience {
    pub experience: Experience,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub task_id: String,
    pub prompt: String,
    pub prediction: String,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cheatsheet {
    pub cheatsheet: String,
    pub history: Vec<HistoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workflow {
    pub step: usize,
    pub source_task_ids: Vec<String>,
    pub text: String,
    /// Embedding of the source task prompt; workflows are retrieved by task
    /// similarity.
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkflowSet {
    pub workflows: Vec<Workflow>,
    /// Successful experiences waiting for the next induction call.
    pub pending: Vec<Experience>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub step: usize,
    pub task_id: String,
    pub prompt: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub trajectory: Trajectory,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpelState {
    /// Successful trajectories; only ever grows.
    pub pool: Vec<PoolEntry>,
    /// Successes since the last batch insight update.
    pub recent_successes: Vec<Trajectory>,
    pub insights: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MemoryPayload {
    Empty,
    RecentBuffer { experiences: Vec<Experience> },
    VectorStore { entries: Vec<StoredExperience> },
    Cheatsheet(Cheatsheet),
    WorkflowSet(WorkflowSet),
    Expel(ExpelState),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    pub policy_id: String,
    pub payload: MemoryPayload,
}

impl MemoryState {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("memory state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Number of stored items, for summaries.
    pub fn size(&self) -> usize {
        match &self.payload {
            MemoryPayload::Empty => 0,
            MemoryPayload::RecentBuffer { experiences } => experiences.len(),
            MemoryPayload::VectorStore { entries } => entries.len(),
            MemoryPayload::Cheatsheet(c) => c.history.len(),
            MemoryPayload::WorkflowSet(w) => w.workflows.len(),
            MemoryPayload::Expel(e) => e.pool.len(),
        }
    }

    pub(crate) fn mismatch(&self, expected: &str) -> Error {
        Error::Invariant(format!(
            "policy {expected} received a memory state belonging to {}",
            self.policy_id
        ))
    }
}
