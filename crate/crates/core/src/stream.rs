//! Datasets, the fixed-order online stream and hold-out construction.
//!
//! Datasets are JSONL files with one record per line:
//! `{"id": str, "prompt": str, "target": str, "category": str?, "metadata": object?}`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CATEGORY: &str = "default";

fn default_category() -> String {
    DEFAULT_CATEGORY.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub id: String,
    pub prompt: String,
    pub target: String,
    #[serde(default = "default_category")]
    pub category: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Task {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>, target: impl Into<String>) -> Self {
        Task {
            id: id.into(),
            prompt: prompt.into(),
            target: target.into(),
            category: default_category(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.category = category.into();
        self
    }

    /// Metadata value rendered as plain text, used to fill extra template
    /// placeholders such as `{entry_point}` or `{options}`.
    pub fn metadata_text(&self, key: &str) -> Option<String> {
        self.metadata.get(key).map(|v| match v {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Array(items) => items
                .iter()
                .map(|i| match i {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join("\n"),
            other => other.to_string(),
        })
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.prompt.trim().is_empty() {
            return Err(format!("task {:?} has an empty prompt", self.id));
        }
        if self.target.trim().is_empty() {
            return Err(format!("task {:?} has an empty target", self.id));
        }
        Ok(())
    }
}

/// The ordered online sequence. Order is fixed at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStream {
    tasks: Vec<Task>,
    order_seed: Option<u64>,
}

impl TaskStream {
    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn order_seed(&self) -> Option<u64> {
        self.order_seed
    }

    /// 1-based access matching step indices.
    pub fn at_step(&self, step: usize) -> Option<&Task> {
        step.checked_sub(1).and_then(|i| self.tasks.get(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionTag {
    InDistribution,
    OutOfDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutSet {
    pub name: String,
    pub tasks: Vec<Task>,
    pub source_dataset: String,
    pub distribution_tag: DistributionTag,
}

impl HoldoutSet {
    pub fn new(
        name: impl Into<String>,
        source_dataset: impl Into<String>,
        tasks: Vec<Task>,
        distribution_tag: DistributionTag,
    ) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Argument("hold-out set must contain at least one task".into()));
        }
        check_unique(&tasks)?;
        Ok(HoldoutSet {
            name: name.into(),
            tasks,
            source_dataset: source_dataset.into(),
            distribution_tag,
        })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Hold-out tasks must never appear in the stream they are paired with.
    pub fn check_disjoint(&self, stream: &TaskStream) -> Result<()> {
        let ids: HashSet<&str> = stream.tasks.iter().map(|t| t.id.as_str()).collect();
        match self.tasks.iter().find(|t| ids.contains(t.id.as_str())) {
            Some(t) => Err(Error::Validation(format!(
                "hold-out set {:?} shares task {:?} with the online stream",
                self.name, t.id
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitSpec {
    TailFraction { fraction: f64 },
    StratifiedSample { size: usize, seed: u64 },
}

fn check_unique(tasks: &[Task]) -> Result<()> {
    let mut seen = HashSet::with_capacity(tasks.len());
    for t in tasks {
        if !seen.insert(t.id.as_str()) {
            return Err(Error::Validation(format!("duplicate task id {:?}", t.id)));
        }
    }
    Ok(())
}

/// Parse JSONL dataset text. `origin` only labels error messages.
pub fn parse_dataset(text: &str, origin: &Path) -> Result<Vec<Task>> {
    let mut tasks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let task: Task = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        task.validate().map_err(|message| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message,
        })?;
        tasks.push(task);
    }
    check_unique(&tasks)?;
    Ok(tasks)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Task>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading dataset {}", path.display()), e))?;
    parse_dataset(&text, path)
}

/// Hold out the last `floor(fraction * N)` tasks; the prefix becomes the stream.
pub fn split_tail(dataset: &str, tasks: &[Task], fraction: f64) -> Result<(TaskStream, HoldoutSet)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!("split fraction {fraction} is outside (0, 1)")));
    }
    if tasks.len() < 2 {
        return Err(Error::Argument("tail split needs at least two tasks".into()));
    }
    // the epsilon keeps products such as 0.29 * 100 from flooring one short
    let n_hold = (fraction * tasks.len() as f64 + 1e-9).floor() as usize;
    if n_hold == 0 || n_hold == tasks.len() {
        return Err(Error::Argument(format!(
            "fraction {fraction} of {} tasks leaves an empty stream or hold-out set",
            tasks.len()
        )));
    }
    let cut = tasks.len() - n_hold;
    let stream = build_stream(tasks[..cut].to_vec(), None)?;
    let holdout = HoldoutSet::new(
        format!("{dataset}_id"),
        dataset,
        tasks[cut..].to_vec(),
        DistributionTag::InDistribution,
    )?;
    Ok((stream, holdout))
}

/// Per-category counts: one task per category first, then the remainder by
/// largest remainder of the proportional quota `size * n_c / N`.
pub fn stratified_counts(pool_counts: &BTreeMap<String, usize>, size: usize) -> Result<BTreeMap<String, usize>> {
    let total: usize = pool_counts.values().sum();
    if size < pool_counts.len() {
        return Err(Error::Argument(format!(
            "infeasible stratified split: size {size} is smaller than the {} categories",
            pool_counts.len()
        )));
    }
    if size > total {
        return Err(Error::Argument(format!("hold-out size {size} exceeds the pool of {total}")));
    }

    // (name, available, floor quota, remainder numerator)
    let entries: Vec<(&String, usize, usize, usize)> = pool_counts
        .iter()
        .map(|(name, &n)| (name, n, size * n / total, size * n % total))
        .collect();
    let mut alloc: Vec<usize> = entries.iter().map(|e| e.2.max(1).min(e.1)).collect();

    let mut assigned: usize = alloc.iter().sum();
    while assigned < size {
        // categories still at their floor quota first, then largest remainder,
        // ties by category order
        let best = (0..entries.len())
            .filter(|&i| alloc[i] < entries[i].1)
            .max_by(|&a, &b| {
                let ka = (alloc[a] <= entries[a].2, entries[a].3);
                let kb = (alloc[b] <= entries[b].2, entries[b].3);
                ka.cmp(&kb).then(b.cmp(&a))
            })
            .expect("size <= pool guarantees spare capacity");
        alloc[best] += 1;
        assigned += 1;
    }
    while assigned > size {
        // take back from the category furthest above its quota
        let excess = |i: usize| (alloc[i] as i128 - entries[i].2 as i128) * total as i128 - entries[i].3 as i128;
        let worst = (0..entries.len())
            .filter(|&i| alloc[i] > 1)
            .max_by(|&a, &b| excess(a).cmp(&excess(b)).then(a.cmp(&b)))
            .expect("size >= categories guarantees a reducible category");
        alloc[worst] -= 1;
        assigned -= 1;
    }

    Ok(entries
        .iter()
        .zip(alloc)
        .map(|(e, n)| (e.0.clone(), n))
        .collect())
}

/// Category-proportional hold-out sample from a training pool. Selection within
/// each category is a seeded shuffle; output keeps pool order.
pub fn split_stratified(dataset: &str, train_pool: &[Task], size: usize, seed: u64) -> Result<HoldoutSet> {
    check_unique(train_pool)?;
    let mut by_category: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, t) in train_pool.iter().enumerate() {
        by_category.entry(t.category.clone()).or_default().push(i);
    }
    let counts: BTreeMap<String, usize> = by_category.iter().map(|(k, v)| (k.clone(), v.len())).collect();
    let alloc = stratified_counts(&counts, size)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(size);
    for (category, mut indices) in by_category {
        indices.shuffle(&mut rng);
        chosen.extend_from_slice(&indices[..alloc[&category]]);
    }
    chosen.sort_unstable();
    HoldoutSet::new(
        format!("{dataset}_id"),
        dataset,
        chosen.into_iter().map(|i| train_pool[i].clone()).collect(),
        DistributionTag::InDistribution,
    )
}

/// Fix the online order: input order when `order_seed` is absent, otherwise a
/// seeded permutation.
pub fn build_stream(mut tasks: Vec<Task>, order_seed: Option<u64>) -> Result<TaskStream> {
    if tasks.is_empty() {
        return Err(Error::Argument("task stream must contain at least one task".into()));
    }
    check_unique(&tasks)?;
    if let Some(seed) = order_seed {
        tasks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(TaskStream { tasks, order_seed })
}
