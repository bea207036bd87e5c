//! Uniform model access: text generation and embeddings behind one handle
//! that meters every call.
//!
//! Backends implement [`Generator`] and [`Embedder`]. The [`Gateway`] wraps
//! them with bounded retries and a [`SharedLedger`]; cloning a gateway with
//! [`Gateway::with_fresh_ledger`] gives an independent meter over the same
//! backends, which the runner uses to keep evaluation cost apart from the
//! online loop.

mod hashing;
#[cfg(feature = "http")]
pub mod http;
mod ledger;
mod scripted;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use hashing::HashingEmbedder;
pub use ledger::{SharedLedger, UsageLedger};
pub use scripted::{ScriptRule, ScriptedModel};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reasoning {
    #[default]
    Off,
    Low,
    On,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub reasoning: Reasoning,
}

impl GenerationRequest {
    fn validate(&self) -> Result<()> {
        if self.user_text.is_empty() {
            return Err(Error::Argument("generation request with empty user text".into()));
        }
        if self.max_tokens == 0 {
            return Err(Error::Argument("max_tokens must be at least 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Argument(format!("temperature {} must be >= 0", self.temperature)));
        }
        Ok(())
    }

    /// The text scripted backends match against and count prompt tokens over.
    pub fn full_text(&self) -> String {
        if self.system_text.is_empty() {
            self.user_text.clone()
        } else {
            format!("{}\n{}", self.system_text, self.user_text)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Milliseconds.
    pub latency: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("embedding must have positive dimension".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("embedding contains non-finite values".into()));
        }
        Ok(EmbeddingVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::Argument(format!(
            "embedding dimensions differ: {} vs {}",
            a.dimension(),
            b.dimension()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Argument("cosine similarity of a zero vector".into()));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub trait Generator: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult>;

    /// Whether calls leave the process. Scripted backends return false.
    fn is_remote(&self) -> bool {
        false
    }
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector>;

    fn dimension(&self) -> usize;

    fn is_remote(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 500,
        }
    }
}

impl RetryPolicy {
    pub fn no_delay() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 0,
        }
    }

    fn delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1 << attempt.min(16)))
    }
}

/// Time source for step durations. Scripted runs use the virtual clock, which
/// only advances by simulated call latency, so run logs stay reproducible.
#[derive(Debug)]
pub enum Clock {
    System(std::time::Instant),
    Virtual(AtomicU64),
}

impl Clock {
    pub fn system() -> Self {
        Clock::System(std::time::Instant::now())
    }

    pub fn virtual_clock() -> Self {
        Clock::Virtual(AtomicU64::new(0))
    }

    pub fn now_ms(&self) -> u64 {
        match self {
            Clock::System(start) => start.elapsed().as_millis() as u64,
            Clock::Virtual(t) => t.load(Ordering::Relaxed),
        }
    }

    fn advance(&self, ms: u64) {
        if let Clock::Virtual(t) = self {
            t.fetch_add(ms, Ordering::Relaxed);
        }
    }
}

/// Default sampling parameters applied to every request a policy builds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationDefaults {
    pub temperature: f64,
    pub max_tokens: u32,
    pub reasoning: Reasoning,
}

impl Default for GenerationDefaults {
    fn default() -> Self {
        GenerationDefaults {
            temperature: 0.7,
            max_tokens: 2048,
            reasoning: Reasoning::Off,
        }
    }
}

/// One metered call, kept when a recorder is attached.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub user_text: String,
    pub result: GenerationResult,
}

#[derive(Clone)]
pub struct Gateway {
    generator: Arc<dyn Generator>,
    embedder: Arc<dyn Embedder>,
    ledger: Arc<SharedLedger>,
    clock: Arc<Clock>,
    retry: RetryPolicy,
    defaults: GenerationDefaults,
    recorder: Option<Arc<Mutex<Vec<CallRecord>>>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("ledger", &self.ledger.snapshot())
            .field("retry", &self.retry)
            .field("defaults", &self.defaults)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(generator: Arc<dyn Generator>, embedder: Arc<dyn Embedder>) -> Self {
        let remote = generator.is_remote() || embedder.is_remote();
        Gateway {
            generator,
            embedder,
            ledger: Arc::new(SharedLedger::new()),
            clock: Arc::new(if remote { Clock::system() } else { Clock::virtual_clock() }),
            retry: RetryPolicy::default(),
            defaults: GenerationDefaults::default(),
            recorder: None,
        }
    }

    /// Scripted model plus the hashing embedder: fully deterministic, no I/O.
    pub fn scripted(model: ScriptedModel) -> Self {
        Gateway::new(Arc::new(model), Arc::new(HashingEmbedder::default()))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_defaults(mut self, defaults: GenerationDefaults) -> Self {
        self.defaults = defaults;
        self
    }

    /// Keep a copy of every successful generation call.
    pub fn with_recorder(mut self) -> Self {
        self.recorder = Some(Arc::new(Mutex::new(Vec::new())));
        self
    }

    /// Same backends and clock, independent ledger and recorder.
    pub fn with_fresh_ledger(&self) -> Self {
        let mut g = self.clone();
        g.ledger = Arc::new(SharedLedger::new());
        if g.recorder.is_some() {
            g.recorder = Some(Arc::new(Mutex::new(Vec::new())));
        }
        g
    }

    pub fn ledger(&self) -> UsageLedger {
        self.ledger.snapshot()
    }

    pub fn recorded_calls(&self) -> Vec<CallRecord> {
        self.recorder
            .as_ref()
            .map(|r| r.lock().expect("recorder poisoned").clone())
            .unwrap_or_default()
    }

    pub fn clock_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn is_remote(&self) -> bool {
        self.generator.is_remote() || self.embedder.is_remote()
    }

    pub fn defaults(&self) -> GenerationDefaults {
        self.defaults
    }

    pub fn request(&self, system_text: impl Into<String>, user_text: impl Into<String>) -> GenerationRequest {
        GenerationRequest {
            system_text: system_text.into(),
            user_text: user_text.into(),
            temperature: self.defaults.temperature,
            max_tokens: self.defaults.max_tokens,
            reasoning: self.defaults.reasoning,
        }
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T>) -> Result<T> {
        let attempts = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            match call() {
                Err(e) if e.is_retryable() && attempt + 1 < attempts => {
                    self.ledger.record_retry();
                    let delay = self.retry.delay(attempt);
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    pub fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult> {
        request.validate()?;
        let result = self.with_retries(|| self.generator.generate(request))?;
        self.ledger
            .record_call(result.prompt_tokens, result.completion_tokens, result.latency);
        self.clock.advance(result.latency);
        if let Some(rec) = &self.recorder {
            rec.lock().expect("recorder poisoned").push(CallRecord {
                user_text: request.user_text.clone(),
                result: result.clone(),
            });
        }
        Ok(result)
    }

    /// Shorthand for a request with the configured defaults.
    pub fn complete(&self, system_text: &str, user_text: &str) -> Result<GenerationResult> {
        self.generate(&self.request(system_text, user_text))
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(Error::Argument("cannot embed empty text".into()));
        }
        let v = self.with_retries(|| self.embedder.embed(text))?;
        if v.dimension() != self.embedder.dimension() {
            return Err(Error::Invariant(format!(
                "embedder returned dimension {} but declares {}",
                v.dimension(),
                self.embedder.dimension()
            )));
        }
        self.ledger.record_embed();
        Ok(v)
    }
}

/// Whitespace-delimited token count used by local backends.
pub fn count_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
