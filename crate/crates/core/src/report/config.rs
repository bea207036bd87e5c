use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{Normalization, Thresholds};
use crate::error::{Error, Result};
use crate::gateway::{
    Embedder, Gateway, GenerationDefaults, HashingEmbedder, Reasoning, RetryPolicy, ScriptRule, ScriptedModel,
};
use crate::policies::{EvaluatorKind, Policy, PolicyConfig, PolicyKind, Templates};
use crate::runner::{default_horizons, make_schedule, RunPlan};
use crate::stream::{
    build_stream, load_dataset, split_stratified, split_tail, DistributionTag, HoldoutSet, SplitSpec, Task,
};

/// One run, as read from a TOML file. Relative paths are resolved against the
/// directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    /// Seeds replay sampling.
    #[serde(default)]
    pub seed: u64,
    /// Directory of `<template>.txt` overrides.
    #[serde(default)]
    pub templates: Option<PathBuf>,
    pub dataset: DatasetConfig,
    /// Extra hold-out sets, evaluated alongside the split hold-out.
    #[serde(default)]
    pub holdout: Vec<ExtraHoldout>,
    pub policy: PolicySection,
    #[serde(default)]
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub id: String,
    pub path: PathBuf,
    #[serde(default)]
    pub evaluator: EvaluatorKind,
    #[serde(default = "defaults::task_format")]
    pub task_format: String,
    /// Shuffle the stream with this seed; input order when absent.
    #[serde(default)]
    pub order_seed: Option<u64>,
    #[serde(default = "defaults::split")]
    pub split: SplitSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtraHoldout {
    pub name: String,
    pub path: PathBuf,
    #[serde(default = "defaults::extra_tag")]
    pub tag: DistributionTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub id: String,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub batch_update_size: Option<usize>,
    #[serde(default)]
    pub max_tries: Option<usize>,
    #[serde(default)]
    pub max_num_rules: Option<usize>,
    #[serde(default)]
    pub induce_steps: Option<usize>,
}

impl PolicySection {
    pub fn kind(&self) -> Result<PolicyKind> {
        self.id.parse().map_err(|_| {
            let valid: Vec<&str> = PolicyKind::ALL.iter().map(|k| k.id()).collect();
            Error::Config(format!("policy.id: unknown policy {:?}, expected one of {}", self.id, valid.join(", ")))
        })
    }

    pub fn config(&self) -> PolicyConfig {
        let d = PolicyConfig::default();
        PolicyConfig {
            k: self.k.unwrap_or(d.k),
            batch_update_size: self.batch_update_size.unwrap_or(d.batch_update_size),
            max_tries: self.max_tries.unwrap_or(d.max_tries),
            max_num_rules: self.max_num_rules.unwrap_or(d.max_num_rules),
            induce_steps: self.induce_steps.unwrap_or(d.induce_steps),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Scripted,
    Http,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingBackend {
    #[default]
    Hashing,
    Http,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptConfig {
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub default: Option<String>,
    #[serde(default)]
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "defaults::temperature")]
    pub temperature: f64,
    #[serde(default = "defaults::max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub reasoning: Reasoning,
    #[serde(default = "defaults::timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "defaults::max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "defaults::retry_delay_ms")]
    pub retry_delay_ms: u64,
    #[serde(default)]
    pub embedding: EmbeddingBackend,
    #[serde(default)]
    pub embedding_model: Option<String>,
    #[serde(default = "defaults::embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default)]
    pub script: ScriptConfig,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        toml::from_str("").expect("every gateway field has a default")
    }
}

/// Which online value serves as the pre-update baseline of the evaluation
/// matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// The online correctness A(τ).
    #[default]
    Online,
    /// Re-evaluation under the memory right after step τ.
    PostUpdate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "defaults::n_checkpoints")]
    pub n_checkpoints: usize,
    /// Every checkpoint gap when absent.
    #[serde(default)]
    pub horizons: Option<Vec<usize>>,
    /// Every eligible task when absent.
    #[serde(default)]
    pub replay_budget: Option<usize>,
    #[serde(default = "defaults::max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub baseline: Baseline,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        toml::from_str("").expect("every schedule field has a default")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub normalization: Normalization,
}

mod defaults {
    use std::path::PathBuf;

    use crate::stream::{DistributionTag, SplitSpec};

    pub fn output_dir() -> PathBuf {
        PathBuf::from("runs")
    }
    pub fn task_format() -> String {
        "plain".into()
    }
    pub fn split() -> SplitSpec {
        SplitSpec::TailFraction { fraction: 0.2 }
    }
    pub fn extra_tag() -> DistributionTag {
        DistributionTag::OutOfDistribution
    }
    pub fn temperature() -> f64 {
        0.7
    }
    pub fn max_tokens() -> u32 {
        2048
    }
    pub fn timeout_secs() -> u64 {
        300
    }
    pub fn max_attempts() -> u32 {
        3
    }
    pub fn retry_delay_ms() -> u64 {
        500
    }
    pub fn embedding_dim() -> usize {
        64
    }
    pub fn n_checkpoints() -> usize {
        10
    }
    pub fn max_in_flight() -> usize {
        4
    }
}

/// Command-line values that replace their config counterparts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub checkpoints: Option<usize>,
    pub horizons: Option<Vec<usize>>,
    pub replay_budget: Option<usize>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn require_file(field: &str, p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{field}: file {} does not exist", p.display())))
    }
}

fn positive(field: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(Error::Config(format!("{field}: must be at least 1")))
    } else {
        Ok(())
    }
}

impl RunConfig {
    /// Parse TOML text without touching the file system. Relative paths stay
    /// relative until [`RunConfig::resolve_paths`].
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        self.output_dir = resolve(base, &self.output_dir);
        self.dataset.path = resolve(base, &self.dataset.path);
        for h in &mut self.holdout {
            h.path = resolve(base, &h.path);
        }
        if let Some(t) = &self.templates {
            self.templates = Some(resolve(base, t));
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(n) = o.checkpoints {
            self.schedule.n_checkpoints = n;
        }
        if let Some(h) = &o.horizons {
            self.schedule.horizons = Some(h.clone());
        }
        if let Some(b) = o.replay_budget {
            self.schedule.replay_budget = Some(b);
        }
    }

    /// Field-level checks, including that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        if self.dataset.id.trim().is_empty() {
            return Err(Error::Config("dataset.id: must not be empty".into()));
        }
        require_file("dataset.path", &self.dataset.path)?;
        crate::policies::templates::task_format(&self.dataset.task_format)
            .map_err(|e| Error::Config(format!("dataset.task_format: {e}")))?;
        match self.dataset.split {
            SplitSpec::TailFraction { fraction } if !(fraction > 0.0 && fraction < 1.0) => {
                return Err(Error::Config(format!("dataset.split.fraction: {fraction} is outside (0, 1)")))
            }
            SplitSpec::StratifiedSample { size, .. } => positive("dataset.split.size", size)?,
            _ => {}
        }
        for (i, h) in self.holdout.iter().enumerate() {
            if h.name.trim().is_empty() {
                return Err(Error::Config(format!("holdout[{i}].name: must not be empty")));
            }
            require_file(&format!("holdout[{i}].path"), &h.path)?;
        }
        if let Some(t) = &self.templates {
            if !t.is_dir() {
                return Err(Error::Config(format!("templates: directory {} does not exist", t.display())));
            }
        }
        self.policy.kind()?;
        self.policy.config().validate()?;

        let g = &self.gateway;
        if !(0.0..=2.0).contains(&g.temperature) {
            return Err(Error::Config(format!("gateway.temperature: {} is outside [0, 2]", g.temperature)));
        }
        positive("gateway.max_tokens", g.max_tokens as usize)?;
        positive("gateway.max_attempts", g.max_attempts as usize)?;
        positive("gateway.embedding_dim", g.embedding_dim)?;
        if g.backend == Backend::Http || g.embedding == EmbeddingBackend::Http {
            if g.endpoint.as_deref().is_none_or(str::is_empty) {
                return Err(Error::Config("gateway.endpoint: required by the http backend".into()));
            }
            if g.backend == Backend::Http && g.model.as_deref().is_none_or(str::is_empty) {
                return Err(Error::Config("gateway.model: required by the http backend".into()));
            }
            if g.embedding == EmbeddingBackend::Http && g.embedding_model.as_deref().is_none_or(str::is_empty) {
                return Err(Error::Config("gateway.embedding_model: required by http embeddings".into()));
            }
        }
        if g.backend == Backend::Scripted {
            ScriptedModel::new(g.script.rules.clone(), g.script.default.clone())
                .map_err(|e| Error::Config(format!("gateway.script: {e}")))?;
        }

        let s = &self.schedule;
        positive("schedule.n_checkpoints", s.n_checkpoints)?;
        positive("schedule.max_in_flight", s.max_in_flight)?;
        if let Some(b) = s.replay_budget {
            positive("schedule.replay_budget", b)?;
        }
        if let Some(h) = &s.horizons {
            if h.is_empty() || h.contains(&0) || h.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(
                    "schedule.horizons: must be a non-empty, strictly increasing list of positive steps".into(),
                ));
            }
        }
        self.diagnostics
            .thresholds
            .validate()
            .map_err(|e| Error::Config(format!("diagnostics.thresholds: {e}")))
    }
}

/// Read, resolve and validate a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    parse_config_with(path, &Overrides::default())
}

/// As [`parse_config`], with command-line overrides applied before
/// validation. An overriding output directory is taken as given.
pub fn parse_config_with(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = RunConfig::from_toml(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.resolve_paths(&base);
    cfg.apply(overrides);
    cfg.validate()?;
    Ok(cfg)
}

fn split_dataset(cfg: &DatasetConfig, tasks: Vec<Task>) -> Result<(Vec<Task>, HoldoutSet)> {
    match cfg.split {
        SplitSpec::TailFraction { fraction } => {
            let (stream, holdout) = split_tail(&cfg.id, &tasks, fraction)?;
            Ok((stream.tasks().to_vec(), holdout))
        }
        SplitSpec::StratifiedSample { size, seed } => {
            let holdout = split_stratified(&cfg.id, &tasks, size, seed)?;
            let held: std::collections::HashSet<&str> = holdout.tasks.iter().map(|t| t.id.as_str()).collect();
            let rest = tasks.iter().filter(|t| !held.contains(t.id.as_str())).cloned().collect();
            Ok((rest, holdout))
        }
    }
}

/// Load datasets and assemble the run. Reads files but writes nothing.
pub fn build_plan(cfg: &RunConfig) -> Result<RunPlan> {
    let tasks = load_dataset(&cfg.dataset.path)?;
    let (stream_tasks, primary) = split_dataset(&cfg.dataset, tasks)?;
    let stream = build_stream(stream_tasks, cfg.dataset.order_seed)?;
    let mut holdout_sets = vec![primary];
    for h in &cfg.holdout {
        holdout_sets.push(HoldoutSet::new(&h.name, &h.name, load_dataset(&h.path)?, h.tag)?);
    }
    let mut templates = Templates::default().with_task_format(&cfg.dataset.task_format)?;
    if let Some(dir) = &cfg.templates {
        templates = templates.with_overrides(dir)?;
    }
    let policy = Policy::new(cfg.policy.kind()?, cfg.policy.config(), templates, cfg.dataset.evaluator)?;
    let t = stream.len();
    let checkpoints = make_schedule(t, cfg.schedule.n_checkpoints)
        .map_err(|e| Error::Config(format!("schedule.n_checkpoints: {e}")))?;
    let horizons = match &cfg.schedule.horizons {
        Some(h) => h.clone(),
        None => default_horizons(&checkpoints),
    };
    let plan = RunPlan {
        method: policy.method_id(),
        dataset: cfg.dataset.id.clone(),
        stream,
        policy,
        checkpoints,
        horizons,
        holdout_sets,
        replay_budget: cfg.schedule.replay_budget,
        seed: cfg.seed,
        max_in_flight: cfg.schedule.max_in_flight,
    };
    plan.validate().map_err(|e| match e {
        Error::Argument(m) => Error::Config(m),
        other => other,
    })?;
    Ok(plan)
}

#[cfg(feature = "http")]
fn http_settings(g: &GatewayConfig, model: Option<&String>) -> crate::gateway::http::HttpSettings {
    crate::gateway::http::HttpSettings {
        endpoint: g.endpoint.clone().unwrap_or_default(),
        model: model.cloned().unwrap_or_default(),
        api_key: None,
        timeout_secs: g.timeout_secs,
    }
}

/// Gateway described by the config. The API key for remote backends comes
/// from the environment only.
pub fn build_gateway(g: &GatewayConfig) -> Result<Gateway> {
    let embedder: Arc<dyn Embedder> = match g.embedding {
        EmbeddingBackend::Hashing => Arc::new(HashingEmbedder::new(g.embedding_dim)?),
        #[cfg(feature = "http")]
        EmbeddingBackend::Http => Arc::new(crate::gateway::http::HttpEmbedder::new(
            http_settings(g, g.embedding_model.as_ref()),
            g.embedding_dim,
        )),
        #[cfg(not(feature = "http"))]
        EmbeddingBackend::Http => return Err(Error::Config("gateway.embedding: built without http support".into())),
    };
    let gateway = match g.backend {
        Backend::Scripted => {
            let model = ScriptedModel::new(g.script.rules.clone(), g.script.default.clone())?
                .with_latency(g.script.latency_ms);
            Gateway::new(Arc::new(model), embedder)
        }
        #[cfg(feature = "http")]
        Backend::Http => Gateway::new(
            Arc::new(crate::gateway::http::HttpClient::new(http_settings(g, g.model.as_ref()))),
            embedder,
        ),
        #[cfg(not(feature = "http"))]
        Backend::Http => return Err(Error::Config("gateway.backend: built without http support".into())),
    };
    Ok(gateway
        .with_defaults(GenerationDefaults {
            temperature: g.temperature,
            max_tokens: g.max_tokens,
            reasoning: g.reasoning,
        })
        .with_retry(RetryPolicy {
            max_attempts: g.max_attempts,
            base_delay_ms: g.retry_delay_ms,
        }))
}
