use super::templates::render;
use super::{
    evaluate_answer, numbered, or_none, render_trajectory, top_k, Context, ExpelState, Policy, PoolEntry,
    Provenance, StepOutcome, Trajectory,
};
use crate::error::Result;
use crate::gateway::{EmbeddingVector, Gateway};
use crate::stream::Task;

/// Split model output into rules, one per non-empty line, dropping list
/// markers, and keep the newest `max_rules`.
pub fn parse_rules(text: &str, max_rules: usize) -> Vec<String> {
    let rules: Vec<String> = text
        .lines()
        .map(strip_marker)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    let skip = rules.len().saturating_sub(max_rules);
    rules.into_iter().skip(skip).collect()
}

fn strip_marker(line: &str) -> &str {
    let l = line.trim();
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = l.strip_prefix(bullet) {
            return rest.trim();
        }
    }
    let digits = l.len() - l.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        let rest = &l[digits..];
        for sep in [". ", ") ", ": "] {
            if let Some(r) = rest.strip_prefix(sep) {
                return r.trim();
            }
        }
    }
    if let Some(rest) = l.strip_prefix('[') {
        if let Some((n, r)) = rest.split_once("] ") {
            if !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()) {
                return r.trim();
            }
        }
    }
    l
}

type Hits = Vec<(usize, f64)>;

fn retrieve(state: &ExpelState, task: &Task, k: usize, gateway: &Gateway) -> Result<(Hits, EmbeddingVector)> {
    let query = gateway.embed(&task.prompt)?;
    let hits = top_k(&query, state.pool.iter().map(|p| &p.embedding), k)?;
    Ok((hits, query))
}

fn rules_text(state: &ExpelState) -> String {
    state.insights.join("\n")
}

fn successes_text(state: &ExpelState, hits: &Hits) -> String {
    numbered(hits.iter().map(|&(i, _)| render_trajectory(&state.pool[i].trajectory)))
}

fn context_of(state: &ExpelState, hits: &Hits) -> Context {
    let rules = rules_text(state);
    let cases = successes_text(state, hits);
    let rendered_text = match (rules.is_empty(), cases.is_empty()) {
        (true, true) => String::new(),
        (false, true) => format!("Rules:\n{rules}"),
        (true, false) => format!("Similar successes:\n{cases}"),
        (false, false) => format!("Rules:\n{rules}\n\nSimilar successes:\n{cases}"),
    };
    Context {
        rendered_text,
        provenance: hits
            .iter()
            .map(|&(i, score)| Provenance {
                entry_id: state.pool[i].trajectory.task_id.clone(),
                score,
            })
            .collect(),
    }
}

fn attempt(
    state: &ExpelState,
    hits: &Hits,
    reflections: &str,
    question: &str,
    policy: &Policy,
    gateway: &Gateway,
) -> Result<String> {
    let rules = rules_text(state);
    let cases = successes_text(state, hits);
    let prompt = if rules.is_empty() && cases.is_empty() && reflections.is_empty() {
        question.to_string()
    } else {
        render(
            &policy.templates.expel_solve,
            &[
                ("memory", or_none(&rules)),
                ("context", or_none(&cases)),
                ("reflections", or_none(reflections)),
                ("question", question),
            ],
        )
    };
    Ok(gateway.complete("", &prompt)?.text)
}

pub(super) fn similar_successes(
    state: &ExpelState,
    task: &Task,
    k: usize,
    gateway: &Gateway,
) -> Result<(Context, EmbeddingVector)> {
    let (hits, query) = retrieve(state, task, k, gateway)?;
    Ok((context_of(state, &hits), query))
}

/// One attempt with no reflections; used for frozen evaluation.
pub(super) fn single_attempt(
    state: &ExpelState,
    task: &Task,
    policy: &Policy,
    gateway: &Gateway,
) -> Result<(String, Context)> {
    let (hits, _) = retrieve(state, task, policy.config.k, gateway)?;
    let prediction = attempt(state, &hits, "", &policy.templates.question(task), policy, gateway)?;
    Ok((prediction, context_of(state, &hits)))
}

/// Rewrite the rule list from `evidence`. Output with no parsable rule keeps
/// the previous list.
fn refresh_insights(state: &mut ExpelState, evidence: &str, policy: &Policy, gateway: &Gateway) -> Result<()> {
    let prompt = render(
        &policy.templates.expel_insight,
        &[("memory", or_none(&rules_text(state))), ("context", evidence)],
    );
    let rules = parse_rules(&gateway.complete("", &prompt)?.text, policy.config.max_num_rules);
    if !rules.is_empty() {
        state.insights = rules;
    }
    Ok(())
}

fn record_success(state: &mut ExpelState, trajectory: Trajectory, embedding: EmbeddingVector) {
    state.recent_successes.push(trajectory.clone());
    state.pool.push(PoolEntry { trajectory, embedding });
}

fn batch_update_if_full(state: &mut ExpelState, policy: &Policy, gateway: &Gateway) -> Result<()> {
    if state.recent_successes.len() >= policy.config.batch_update_size {
        let evidence = numbered(state.recent_successes.iter().map(render_trajectory));
        refresh_insights(state, &evidence, policy, gateway)?;
        state.recent_successes.clear();
    }
    Ok(())
}

fn trajectory(task: &Task, step: usize, answer: &str) -> Trajectory {
    Trajectory {
        step,
        task_id: task.id.clone(),
        prompt: task.prompt.clone(),
        answer: answer.to_string(),
    }
}

/// Single attempt; successes feed the pool and the batch insight update.
pub fn expel_st_step(
    state: &ExpelState,
    task: &Task,
    step: usize,
    policy: &Policy,
    gateway: &Gateway,
) -> Result<(StepOutcome, ExpelState)> {
    let (hits, query) = retrieve(state, task, policy.config.k, gateway)?;
    let context = context_of(state, &hits);
    let prediction = attempt(state, &hits, "", &policy.templates.question(task), policy, gateway)?;
    let feedback = evaluate_answer(&prediction, task, policy.evaluator);
    let mut next = state.clone();
    if feedback.correct {
        record_success(&mut next, trajectory(task, step, &prediction), query);
        batch_update_if_full(&mut next, policy, gateway)?;
    }
    let outcome = StepOutcome {
        prediction,
        feedback,
        tries_used: 1,
        context,
    };
    Ok((outcome, next))
}

/// Up to `max_tries` attempts with a reflection after every failure. A task
/// that both failed and succeeded triggers a pair update of the rules.
pub fn expel_mt_step(
    state: &ExpelState,
    task: &Task,
    step: usize,
    policy: &Policy,
    gateway: &Gateway,
) -> Result<(StepOutcome, ExpelState)> {
    let (hits, query) = retrieve(state, task, policy.config.k, gateway)?;
    let context = context_of(state, &hits);
    let question = policy.templates.question(task);
    let mut reflections: Vec<String> = Vec::new();
    let mut failed: Option<String> = None;
    let mut last = None;
    for tries in 1..=policy.config.max_tries {
        let prediction = attempt(state, &hits, &reflections.join("\n"), &question, policy, gateway)?;
        let feedback = evaluate_answer(&prediction, task, policy.evaluator);
        if !feedback.correct {
            let prompt = render(
                &policy.templates.reflection,
                &[("question", &question), ("context", &prediction)],
            );
            let reflection = gateway.complete("", &prompt)?.text.trim().to_string();
            reflections.push(format!("Attempt {tries}: {reflection}"));
            failed = Some(prediction.clone());
        }
        let done = feedback.correct;
        last = Some((prediction, feedback, tries));
        if done {
            break;
        }
    }
    let (prediction, feedback, tries_used) = last.expect("max_tries is at least 1");
    let mut next = state.clone();
    if feedback.correct {
        let success = trajectory(task, step, &prediction);
        if let Some(fail) = &failed {
            let evidence = format!(
                "Successful attempt:\n{}\n\nFailed attempt:\n{}",
                render_trajectory(&success),
                render_trajectory(&trajectory(task, step, fail))
            );
            refresh_insights(&mut next, &evidence, policy, gateway)?;
        }
        record_success(&mut next, success, query);
        batch_update_if_full(&mut next, policy, gateway)?;
    }
    let outcome = StepOutcome {
        prediction,
        feedback,
        tries_used,
        context,
    };
    Ok((outcome, next))
}
