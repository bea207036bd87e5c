//! Memory policies: build a context from the current memory, predict, take
//! feedback, update.
//!
//! Every policy exposes two entry points. [`Policy::step`] is the online
//! update used by the runner; it works on a copy of the state and commits
//! only when the whole step succeeds, so a gateway failure leaves the memory
//! exactly as it was. [`Policy::answer_frozen`] answers a task against a
//! state without changing it, which is what hold-out and retrospective
//! evaluation need.

mod awm;
mod dcrs;
mod evaluate;
mod expel;
mod replay;
mod state;
pub mod templates;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{cosine_similarity, EmbeddingVector, Gateway};
use crate::stream::Task;

pub use awm::awm_step;
pub use dcrs::dc_rs_step;
pub use evaluate::{evaluate_answer, last_boxed, EvaluatorKind, Feedback};
pub use expel::{expel_mt_step, expel_st_step, parse_rules};
pub use replay::{buffer_update, memory_free_update};
pub use state::{
    Cheatsheet, Experience, ExpelState, HistoryEntry, MemoryPayload, MemoryState, PoolEntry, StoredExperience,
    Trajectory, Workflow, WorkflowSet,
};
pub use templates::Templates;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    MemoryFree,
    ExpRecent,
    ExpRag,
    DcRs,
    Awm,
    ExpelSt,
    ExpelMt,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::MemoryFree,
        PolicyKind::ExpRecent,
        PolicyKind::ExpRag,
        PolicyKind::DcRs,
        PolicyKind::Awm,
        PolicyKind::ExpelSt,
        PolicyKind::ExpelMt,
    ];

    pub fn id(self) -> &'static str {
        match self {
            PolicyKind::MemoryFree => "memory_free",
            PolicyKind::ExpRecent => "exp_recent",
            PolicyKind::ExpRag => "exp_rag",
            PolicyKind::DcRs => "dc_rs",
            PolicyKind::Awm => "awm",
            PolicyKind::ExpelSt => "expel_st",
            PolicyKind::ExpelMt => "expel_mt",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL.into_iter().find(|k| k.id() == s).ok_or_else(|| {
            let ids: Vec<&str> = PolicyKind::ALL.iter().map(|k| k.id()).collect();
            Error::Config(format!("unknown policy {s:?}; expected one of {ids:?}"))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    /// Retrieval budget K.
    #[serde(default = "defaults::k")]
    pub k: usize,
    /// Successes per batch insight update (L).
    #[serde(default = "defaults::batch_update_size")]
    pub batch_update_size: usize,
    /// Attempts per task for the multi-try policy (Z).
    #[serde(default = "defaults::max_tries")]
    pub max_tries: usize,
    #[serde(default = "defaults::max_num_rules")]
    pub max_num_rules: usize,
    /// Successes per workflow induction call.
    #[serde(default = "defaults::induce_steps")]
    pub induce_steps: usize,
}

mod defaults {
    pub fn k() -> usize {
        3
    }
    pub fn batch_update_size() -> usize {
        8
    }
    pub fn max_tries() -> usize {
        3
    }
    pub fn max_num_rules() -> usize {
        20
    }
    pub fn induce_steps() -> usize {
        1
    }
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            k: defaults::k(),
            batch_update_size: defaults::batch_update_size(),
            max_tries: defaults::max_tries(),
            max_num_rules: defaults::max_num_rules(),
            induce_steps: defaults::induce_steps(),
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("k", self.k),
            ("batch_update_size", self.batch_update_size),
            ("max_tries", self.max_tries),
            ("max_num_rules", self.max_num_rules),
            ("induce_steps", self.induce_steps),
        ] {
            if value == 0 {
                return Err(Error::Config(format!("policy.{name}: must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub entry_id: String,
    pub score: f64,
}

/// What a policy injects into the prompt, plus where it came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub rendered_text: String,
    pub provenance: Vec<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub prediction: String,
    pub feedback: Feedback,
    pub tries_used: usize,
    pub context: Context,
}

/// Indices of the `k` best candidates by cosine similarity, best first; equal
/// scores keep insertion order.
pub fn top_k<'a>(
    query: &EmbeddingVector,
    candidates: impl IntoIterator<Item = &'a EmbeddingVector>,
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    let mut scored = candidates
        .into_iter()
        .enumerate()
        .map(|(i, e)| cosine_similarity(query, e).map(|s| (i, s)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

pub(crate) fn render_experience(e: &Experience) -> String {
    format!(
        "Task: {}\nAnswer: {}\nOutcome: {}",
        e.prompt,
        e.prediction,
        if e.correct { "correct" } else { "incorrect" }
    )
}

pub(crate) fn render_trajectory(t: &Trajectory) -> String {
    format!("Task: {}\nAnswer: {}", t.prompt, t.answer)
}

pub(crate) fn numbered(items: impl IntoIterator<Item = String>) -> String {
    items
        .into_iter()
        .enumerate()
        .map(|(i, s)| format!("[{}] {}", i + 1, s))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub(crate) fn or_none(text: &str) -> &str {
    if text.trim().is_empty() {
        "(none)"
    } else {
        text
    }
}

#[derive(Debug, Clone)]
pub struct Policy {
    pub kind: PolicyKind,
    pub config: PolicyConfig,
    pub templates: Templates,
    pub evaluator: EvaluatorKind,
}

impl Policy {
    pub fn new(kind: PolicyKind, config: PolicyConfig, templates: Templates, evaluator: EvaluatorKind) -> Result<Self> {
        config.validate()?;
        Ok(Policy {
            kind,
            config,
            templates,
            evaluator,
        })
    }

    /// Default templates and the exact-match evaluator.
    pub fn simple(kind: PolicyKind, config: PolicyConfig) -> Result<Self> {
        Policy::new(kind, config, Templates::default(), EvaluatorKind::ExactMatch)
    }

    /// Identifier used in reports, e.g. `exp_recent_k3`.
    pub fn method_id(&self) -> String {
        match self.kind {
            PolicyKind::ExpRecent | PolicyKind::ExpRag => format!("{}_k{}", self.kind.id(), self.config.k),
            kind => kind.id().to_string(),
        }
    }

    pub fn initial_state(&self) -> MemoryState {
        let payload = match self.kind {
            PolicyKind::MemoryFree => MemoryPayload::Empty,
            PolicyKind::ExpRecent => MemoryPayload::RecentBuffer {
                experiences: Vec::new(),
            },
            PolicyKind::ExpRag => MemoryPayload::VectorStore { entries: Vec::new() },
            PolicyKind::DcRs => MemoryPayload::Cheatsheet(Cheatsheet::default()),
            PolicyKind::Awm => MemoryPayload::WorkflowSet(WorkflowSet::default()),
            PolicyKind::ExpelSt | PolicyKind::ExpelMt => MemoryPayload::Expel(ExpelState::default()),
        };
        MemoryState {
            policy_id: self.kind.id().to_string(),
            payload,
        }
    }

    fn check_owner(&self, state: &MemoryState) -> Result<()> {
        if state.policy_id != self.kind.id() {
            return Err(state.mismatch(self.kind.id()));
        }
        Ok(())
    }

    /// The context this policy would inject for `task` given `state`.
    pub fn build_context(&self, state: &MemoryState, task: &Task, gateway: &Gateway) -> Result<Context> {
        self.check_owner(state)?;
        let k = self.config.k;
        match &state.payload {
            MemoryPayload::Empty => Ok(Context::default()),
            MemoryPayload::RecentBuffer { experiences } => Ok(replay::recent_context(experiences, k)),
            MemoryPayload::VectorStore { entries } => replay::rag_context(entries, task, k, gateway),
            MemoryPayload::Cheatsheet(c) => dcrs::retrieve(c, task, k, gateway).map(|(ctx, _)| ctx),
            MemoryPayload::WorkflowSet(w) => awm::workflow_context(w, task, k, gateway).map(|(ctx, _)| ctx),
            MemoryPayload::Expel(e) => expel::similar_successes(e, task, k, gateway).map(|(ctx, _)| ctx),
        }
    }

    /// Plain question when there is no memory text, otherwise the template.
    pub(crate) fn with_memory(&self, template: &str, memory: &str, question: &str) -> String {
        if memory.trim().is_empty() {
            question.to_string()
        } else {
            templates::render(template, &[("memory", memory), ("question", question)])
        }
    }

    fn predict(&self, prompt: &str, gateway: &Gateway) -> Result<String> {
        Ok(gateway.complete("", prompt)?.text)
    }

    /// One online step: answer `task` from `state`, evaluate, and update
    /// `state` in place. On error `state` is left untouched.
    pub fn step(&self, state: &mut MemoryState, task: &Task, step: usize, gateway: &Gateway) -> Result<StepOutcome> {
        self.check_owner(state)?;
        let question = self.templates.question(task);
        let (outcome, payload) = match &state.payload {
            MemoryPayload::Empty => {
                let prediction = self.predict(&question, gateway)?;
                let feedback = evaluate_answer(&prediction, task, self.evaluator);
                let next = memory_free_update(state, task, &prediction, &feedback);
                let outcome = StepOutcome {
                    prediction,
                    feedback,
                    tries_used: 1,
                    context: Context::default(),
                };
                (outcome, next.payload)
            }
            MemoryPayload::RecentBuffer { .. } | MemoryPayload::VectorStore { .. } => {
                let context = self.build_context(state, task, gateway)?;
                let prompt = self.with_memory(&self.templates.solve_with_memory, &context.rendered_text, &question);
                let prediction = self.predict(&prompt, gateway)?;
                let feedback = evaluate_answer(&prediction, task, self.evaluator);
                let next = buffer_update(state, task, step, &prediction, &feedback, gateway)?;
                let outcome = StepOutcome {
                    prediction,
                    feedback,
                    tries_used: 1,
                    context,
                };
                (outcome, next.payload)
            }
            MemoryPayload::Cheatsheet(c) => {
                let (prediction, next, context) = dc_rs_step(c, task, step, self, gateway)?;
                let feedback = evaluate_answer(&prediction, task, self.evaluator);
                let outcome = StepOutcome {
                    prediction,
                    feedback,
                    tries_used: 1,
                    context,
                };
                (outcome, MemoryPayload::Cheatsheet(next))
            }
            MemoryPayload::WorkflowSet(w) => {
                let (prediction, feedback, next, context) = awm_step(w, task, step, self, gateway)?;
                let outcome = StepOutcome {
                    prediction,
                    feedback,
                    tries_used: 1,
                    context,
                };
                (outcome, MemoryPayload::WorkflowSet(next))
            }
            MemoryPayload::Expel(e) => {
                let (outcome, next) = if self.kind == PolicyKind::ExpelMt {
                    expel_mt_step(e, task, step, self, gateway)?
                } else {
                    expel_st_step(e, task, step, self, gateway)?
                };
                (outcome, MemoryPayload::Expel(next))
            }
        };
        state.payload = payload;
        Ok(outcome)
    }

    /// Answer `task` against a frozen `state` with a single attempt. Never
    /// modifies the state.
    pub fn answer_frozen(&self, state: &MemoryState, task: &Task, gateway: &Gateway) -> Result<(String, Feedback)> {
        self.check_owner(state)?;
        let question = self.templates.question(task);
        let prediction = match &state.payload {
            MemoryPayload::Empty => self.predict(&question, gateway)?,
            MemoryPayload::RecentBuffer { .. } | MemoryPayload::VectorStore { .. } => {
                let context = self.build_context(state, task, gateway)?;
                let prompt = self.with_memory(&self.templates.solve_with_memory, &context.rendered_text, &question);
                self.predict(&prompt, gateway)?
            }
            MemoryPayload::Cheatsheet(c) => dcrs::answer(c, task, self, gateway)?,
            MemoryPayload::WorkflowSet(w) => awm::answer(w, task, self, gateway)?.0,
            MemoryPayload::Expel(e) => expel::single_attempt(e, task, self, gateway)?.0,
        };
        let feedback = evaluate_answer(&prediction, task, self.evaluator);
        Ok((prediction, feedback))
    }
}
