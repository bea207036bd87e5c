//! Metric engine: online utility, hold-out generalization, backward transfer,
//! forgetting, efficiency, trajectory labels and cross-method comparison.
//!
//! Everything here is a pure function of its inputs. [`oracle`] holds an
//! independent exact-arithmetic reimplementation used to test the engine.

mod classify;
mod compare;
mod matrix;
mod online;
pub mod oracle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runner::RunLog;
use crate::stream::DistributionTag;

pub use classify::{classify_curve, classify_trajectory, tail_variance, Pattern, Preference, Thresholds};
pub use compare::{
    pareto_filter, rank_profiles, Dimension, DimensionScore, MethodProfile, Normalization, Objective,
    ObjectiveMetric, Sense,
};
pub use matrix::{bwt, forgetting_approx, forgetting_exact, immediate_validity, EvalMatrix};
pub use online::{
    cumulative_curve, holdout_final, mer, online_acc, ped, r_min, trend_ho, CumulativeCurve, HoldoutTrace,
    OnlineTrace,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EfficiencySummary {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub tokens_total: u64,
    pub runtime_s: f64,
}

/// Token and time totals of the online pass: every generation call made while
/// processing the stream, memory updates and reflections included.
pub fn efficiency_summary(log: &RunLog) -> EfficiencySummary {
    let prompt_tokens: u64 = log.steps.iter().map(|s| s.prompt_tokens).sum();
    let completion_tokens: u64 = log.steps.iter().map(|s| s.completion_tokens).sum();
    let latency_ms: u64 = log.steps.iter().map(|s| s.latency_ms).sum();
    EfficiencySummary {
        prompt_tokens,
        completion_tokens,
        tokens_total: prompt_tokens + completion_tokens,
        runtime_s: latency_ms as f64 / 1000.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutSummary {
    pub set: String,
    pub tag: DistributionTag,
    pub points: Vec<(usize, f64)>,
    pub holdout_acc: f64,
    /// Absent with fewer than two checkpoints.
    pub trend_ho: Option<f64>,
}

/// Metrics at one horizon; absent where no task qualifies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonValues {
    pub t: usize,
    pub bwt: Option<f64>,
    pub f_exact: Option<f64>,
    pub f_approx: Option<f64>,
}

impl HorizonValues {
    /// Exact forgetting when defined, otherwise the checkpoint approximation.
    pub fn forgetting(&self) -> Option<f64> {
        self.f_exact.or(self.f_approx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub method: String,
    pub dataset: String,
    pub trace: Vec<u8>,
    pub curve: Vec<f64>,
    pub online_acc: f64,
    pub ped: f64,
    pub mer: f64,
    pub r_min: f64,
    pub holdout: Vec<HoldoutSummary>,
    pub iv: Option<f64>,
    pub horizons: Vec<HorizonValues>,
    pub tokens_total: u64,
    pub runtime_s: f64,
    pub pattern: Pattern,
}

impl DiagnosticReport {
    pub fn horizon(&self, t: usize) -> Option<&HorizonValues> {
        self.horizons.iter().find(|h| h.t == t)
    }

    /// The first hold-out set, which carries the headline numbers.
    pub fn primary_holdout(&self) -> Option<&HoldoutSummary> {
        self.holdout.first()
    }
}

pub struct DiagnosticInputs<'a> {
    pub method: &'a str,
    pub dataset: &'a str,
    pub trace: &'a OnlineTrace,
    pub holdout: Vec<(String, DistributionTag, HoldoutTrace)>,
    pub matrix: Option<&'a EvalMatrix>,
    pub horizons: &'a [usize],
    pub efficiency: EfficiencySummary,
    pub thresholds: &'a Thresholds,
}

fn optional(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::EmptyHorizon { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn diagnose(inputs: DiagnosticInputs<'_>) -> Result<DiagnosticReport> {
    let t_len = inputs.trace.len();
    let curve = cumulative_curve(inputs.trace);
    let holdout = inputs
        .holdout
        .into_iter()
        .map(|(set, tag, trace)| {
            let holdout_acc = holdout_final(&trace, t_len)?;
            let trend = if trace.points().len() >= 2 {
                Some(trend_ho(&trace, t_len)?)
            } else {
                None
            };
            Ok(HoldoutSummary {
                set,
                tag,
                points: trace.points().to_vec(),
                holdout_acc,
                trend_ho: trend,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (iv, horizons) = match inputs.matrix {
        None => (None, Vec::new()),
        Some(m) => {
            if m.len() != t_len {
                return Err(Error::Invariant(format!(
                    "evaluation matrix covers {} steps but the trace has {t_len}",
                    m.len()
                )));
            }
            let iv = match immediate_validity(m) {
                Ok((_, v)) => Some(v),
                Err(Error::EmptyHorizon { .. }) => None,
                Err(e) => return Err(e),
            };
            let hs = inputs
                .horizons
                .iter()
                .map(|&t| {
                    Ok(HorizonValues {
                        t,
                        bwt: optional(bwt(m, t))?,
                        f_exact: optional(forgetting_exact(m, t))?,
                        f_approx: optional(forgetting_approx(m, t, inputs.horizons))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (iv, hs)
        }
    };
    Ok(DiagnosticReport {
        method: inputs.method.to_string(),
        dataset: inputs.dataset.to_string(),
        trace: inputs.trace.values().to_vec(),
        online_acc: online_acc(&curve),
        ped: ped(&curve),
        mer: mer(&curve),
        r_min: r_min(&curve),
        pattern: classify_curve(&curve, inputs.thresholds),
        curve: curve.values().to_vec(),
        holdout,
        iv,
        horizons,
        tokens_total: inputs.efficiency.tokens_total,
        runtime_s: inputs.efficiency.runtime_s,
    })
}
