use std::ops::{Add, AddAssign, Sub};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

/// Cumulative token, call and time accounting. Plain value; see
/// [`SharedLedger`] for the concurrent accumulator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageLedger {
    pub prompt_tokens_total: u64,
    pub completion_tokens_total: u64,
    pub call_count: u64,
    /// Sum of per-call latencies in milliseconds.
    pub wall_clock_total: u64,
    /// Extra attempts issued after a retryable failure. Not part of the
    /// token totals: failed attempts report no usage.
    #[serde(default)]
    pub retry_count: u64,
    #[serde(default)]
    pub embed_calls: u64,
}

impl UsageLedger {
    pub fn tokens_total(&self) -> u64 {
        self.prompt_tokens_total + self.completion_tokens_total
    }
}

impl Add for UsageLedger {
    type Output = UsageLedger;

    fn add(self, rhs: Self) -> Self {
        UsageLedger {
            prompt_tokens_total: self.prompt_tokens_total + rhs.prompt_tokens_total,
            completion_tokens_total: self.completion_tokens_total + rhs.completion_tokens_total,
            call_count: self.call_count + rhs.call_count,
            wall_clock_total: self.wall_clock_total + rhs.wall_clock_total,
            retry_count: self.retry_count + rhs.retry_count,
            embed_calls: self.embed_calls + rhs.embed_calls,
        }
    }
}

impl AddAssign for UsageLedger {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

/// Difference between two snapshots of the same monotone ledger.
impl Sub for UsageLedger {
    type Output = UsageLedger;

    fn sub(self, rhs: Self) -> Self {
        UsageLedger {
            prompt_tokens_total: self.prompt_tokens_total - rhs.prompt_tokens_total,
            completion_tokens_total: self.completion_tokens_total - rhs.completion_tokens_total,
            call_count: self.call_count - rhs.call_count,
            wall_clock_total: self.wall_clock_total - rhs.wall_clock_total,
            retry_count: self.retry_count - rhs.retry_count,
            embed_calls: self.embed_calls - rhs.embed_calls,
        }
    }
}

#[derive(Debug, Default)]
pub struct SharedLedger {
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    calls: AtomicU64,
    wall_clock: AtomicU64,
    retries: AtomicU64,
    embeds: AtomicU64,
}

impl SharedLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_call(&self, prompt_tokens: u64, completion_tokens: u64, latency_ms: u64) {
        self.prompt_tokens.fetch_add(prompt_tokens, Ordering::Relaxed);
        self.completion_tokens.fetch_add(completion_tokens, Ordering::Relaxed);
        self.wall_clock.fetch_add(latency_ms, Ordering::Relaxed);
        self.calls.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_retry(&self) {
        self.retries.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_embed(&self) {
        self.embeds.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> UsageLedger {
        UsageLedger {
            prompt_tokens_total: self.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens_total: self.completion_tokens.load(Ordering::Relaxed),
            call_count: self.calls.load(Ordering::Relaxed),
            wall_clock_total: self.wall_clock.load(Ordering::Relaxed),
            retry_count: self.retries.load(Ordering::Relaxed),
            embed_calls: self.embeds.load(Ordering::Relaxed),
        }
    }
}
