use super::{
    evaluate_answer, numbered, render_experience, top_k, Context, Experience, Feedback, Policy, Provenance,
    Workflow, WorkflowSet,
};
use crate::error::Result;
use crate::gateway::{EmbeddingVector, Gateway};
use crate::stream::Task;

const SUMMARY_HEADER: &str = "## Summary Workflows";

pub(super) fn workflow_context(
    state: &WorkflowSet,
    task: &Task,
    k: usize,
    gateway: &Gateway,
) -> Result<(Context, EmbeddingVector)> {
    let query = gateway.embed(&task.prompt)?;
    let hits = top_k(&query, state.workflows.iter().map(|w| &w.embedding), k)?;
    let ctx = Context {
        rendered_text: numbered(hits.iter().map(|&(i, _)| state.workflows[i].text.clone())),
        provenance: hits
            .iter()
            .map(|&(i, score)| Provenance {
                entry_id: format!("workflow@{}", state.workflows[i].step),
                score,
            })
            .collect(),
    };
    Ok((ctx, query))
}

pub(super) fn answer(
    state: &WorkflowSet,
    task: &Task,
    policy: &Policy,
    gateway: &Gateway,
) -> Result<(String, Context, EmbeddingVector)> {
    let (context, query) = workflow_context(state, task, policy.config.k, gateway)?;
    let question = policy.templates.question(task);
    let prompt = policy.with_memory(&policy.templates.awm_solve, &context.rendered_text, &question);
    let prediction = gateway.complete("", &prompt)?.text;
    Ok((prediction, context, query))
}

/// Answer with the current workflows; every success is queued and, once
/// `induce_steps` successes are pending, turned into one new workflow.
pub fn awm_step(
    state: &WorkflowSet,
    task: &Task,
    step: usize,
    policy: &Policy,
    gateway: &Gateway,
) -> Result<(String, Feedback, WorkflowSet, Context)> {
    let (prediction, context, query) = answer(state, task, policy, gateway)?;
    let feedback = evaluate_answer(&prediction, task, policy.evaluator);
    let mut next = state.clone();
    if feedback.correct {
        next.pending.push(Experience {
            step,
            task_id: task.id.clone(),
            prompt: task.prompt.clone(),
            prediction: prediction.clone(),
            correct: true,
        });
        if next.pending.len() >= policy.config.induce_steps {
            let examples = next.pending.iter().map(render_experience).collect::<Vec<_>>().join("\n\n");
            let prompt = [
                policy.templates.awm_induction.as_str(),
                policy.templates.awm_one_shot.as_str(),
                examples.as_str(),
                SUMMARY_HEADER,
            ]
            .join("\n\n");
            let text = gateway.complete("", &prompt)?.text.trim().to_string();
            let sources = std::mem::take(&mut next.pending);
            next.workflows.push(Workflow {
                step,
                source_task_ids: sources.into_iter().map(|e| e.task_id).collect(),
                text,
                embedding: query,
            });
        }
    }
    Ok((prediction, feedback, next, context))
}
