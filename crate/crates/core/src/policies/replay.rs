use super::{render_experience, numbered, top_k, Context, Experience, Feedback, MemoryPayload, MemoryState, Provenance, StoredExperience};
use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::stream::Task;

/// The memory-free baseline keeps nothing.
pub fn memory_free_update(state: &MemoryState, _task: &Task, _prediction: &str, _feedback: &Feedback) -> MemoryState {
    state.clone()
}

/// Append one experience; the vector store also records `embed(task.prompt)`.
pub fn buffer_update(
    state: &MemoryState,
    task: &Task,
    step: usize,
    prediction: &str,
    feedback: &Feedback,
    gateway: &Gateway,
) -> Result<MemoryState> {
    let experience = Experience {
        step,
        task_id: task.id.clone(),
        prompt: task.prompt.clone(),
        prediction: prediction.to_string(),
        correct: feedback.correct,
    };
    let mut next = state.clone();
    match &mut next.payload {
        MemoryPayload::RecentBuffer { experiences } => {
            if experiences.last().is_some_and(|e| e.step >= step) {
                return Err(Error::Invariant(format!("experience for step {step} is not newer than the buffer")));
            }
            experiences.push(experience);
        }
        MemoryPayload::VectorStore { entries } => {
            let embedding = gateway.embed(&task.prompt)?;
            entries.push(StoredExperience { experience, embedding });
        }
        _ => return Err(state.mismatch("exp_recent or exp_rag")),
    }
    Ok(next)
}

pub(super) fn recent_context(experiences: &[Experience], k: usize) -> Context {
    let recent = &experiences[experiences.len().saturating_sub(k)..];
    Context {
        rendered_text: numbered(recent.iter().map(render_experience)),
        provenance: recent
            .iter()
            .map(|e| Provenance {
                entry_id: e.task_id.clone(),
                score: 1.0,
            })
            .collect(),
    }
}

pub(super) fn rag_context(entries: &[StoredExperience], task: &Task, k: usize, gateway: &Gateway) -> Result<Context> {
    if entries.is_empty() {
        return Ok(Context::default());
    }
    let query = gateway.embed(&task.prompt)?;
    let hits = top_k(&query, entries.iter().map(|e| &e.embedding), k)?;
    Ok(Context {
        rendered_text: numbered(hits.iter().map(|&(i, _)| render_experience(&entries[i].experience))),
        provenance: hits
            .iter()
            .map(|&(i, score)| Provenance {
                entry_id: entries[i].experience.task_id.clone(),
                score,
            })
            .collect(),
    })
}
