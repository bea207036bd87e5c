use super::templates::render;
use super::{numbered, or_none, top_k, Cheatsheet, Context, HistoryEntry, Policy, Provenance};
use crate::error::Result;
use crate::gateway::{EmbeddingVector, Gateway};
use crate::stream::Task;

fn render_case(h: &HistoryEntry) -> String {
    format!("Task: {}\nAnswer: {}", h.prompt, h.prediction)
}

/// Top-k past cases by prompt similarity, plus the query embedding.
pub(super) fn retrieve(
    state: &Cheatsheet,
    task: &Task,
    k: usize,
    gateway: &Gateway,
) -> Result<(Context, EmbeddingVector)> {
    let query = gateway.embed(&task.prompt)?;
    let hits = top_k(&query, state.history.iter().map(|h| &h.embedding), k)?;
    let ctx = Context {
        rendered_text: numbered(hits.iter().map(|&(i, _)| render_case(&state.history[i]))),
        provenance: hits
            .iter()
            .map(|&(i, score)| Provenance {
                entry_id: state.history[i].task_id.clone(),
                score,
            })
            .collect(),
    };
    Ok((ctx, query))
}

/// Curate a new cheatsheet, then answer with it. Shared by the online step
/// and frozen evaluation.
fn curate_and_answer(
    state: &Cheatsheet,
    task: &Task,
    policy: &Policy,
    gateway: &Gateway,
) -> Result<(String, String, Context, EmbeddingVector)> {
    let t = &policy.templates;
    let question = t.question(task);
    let (context, query) = retrieve(state, task, policy.config.k, gateway)?;
    let curator_prompt = render(
        &t.dc_curator,
        &[
            ("memory", or_none(&state.cheatsheet)),
            ("context", or_none(&context.rendered_text)),
            ("question", &question),
        ],
    );
    let curated = gateway.complete("", &curator_prompt)?.text.trim().to_string();
    let sheet = if curated.is_empty() {
        context.rendered_text.clone()
    } else {
        curated
    };
    let answer_prompt = policy.with_memory(&t.dc_generator, &sheet, &question);
    let prediction = gateway.complete("", &answer_prompt)?.text;
    Ok((prediction, sheet, context, query))
}

/// Retrieve, curate, answer, then record the case in the history.
pub fn dc_rs_step(
    state: &Cheatsheet,
    task: &Task,
    step: usize,
    policy: &Policy,
    gateway: &Gateway,
) -> Result<(String, Cheatsheet, Context)> {
    let (prediction, sheet, context, embedding) = curate_and_answer(state, task, policy, gateway)?;
    let mut next = state.clone();
    next.cheatsheet = sheet;
    next.history.push(HistoryEntry {
        step,
        task_id: task.id.clone(),
        prompt: task.prompt.clone(),
        prediction: prediction.clone(),
        embedding,
    });
    Ok((prediction, next, context))
}

/// Curation happens on a scratch copy and is discarded.
pub(super) fn answer(state: &Cheatsheet, task: &Task, policy: &Policy, gateway: &Gateway) -> Result<String> {
    Ok(curate_and_answer(state, task, policy, gateway)?.0)
}
