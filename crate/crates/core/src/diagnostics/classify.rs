use serde::{Deserialize, Serialize};

use super::online::{mer, ped, r_min, CumulativeCurve};
use crate::error::{Error, Result};

/// Cutoffs for the qualitative trajectory labels. Values at or above `high`
/// count as high; values in `[low, high)` are neither high nor low and are
/// treated as not high.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default = "defaults::high")]
    pub high: f64,
    #[serde(default = "defaults::low")]
    pub low: f64,
    /// r_min below this is early.
    #[serde(default = "defaults::early")]
    pub early: f64,
    /// r_min at or above this is late.
    #[serde(default = "defaults::late")]
    pub late: f64,
    /// Tail variance of the cumulative curve below which a degrading curve
    /// counts as having stabilized.
    #[serde(default = "defaults::flat_variance")]
    pub flat_variance: f64,
}

mod defaults {
    pub fn high() -> f64 {
        0.05
    }
    pub fn low() -> f64 {
        0.02
    }
    pub fn early() -> f64 {
        1.0 / 3.0
    }
    pub fn late() -> f64 {
        2.0 / 3.0
    }
    pub fn flat_variance() -> f64 {
        1e-4
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            high: defaults::high(),
            low: defaults::low(),
            early: defaults::early(),
            late: defaults::late(),
            flat_variance: defaults::flat_variance(),
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 <= self.low
            && self.low <= self.high
            && 0.0 < self.early
            && self.early <= self.late
            && self.late <= 1.0
            && self.flat_variance >= 0.0;
        if !ok {
            return Err(Error::Config(format!(
                "diagnostics thresholds need 0 <= low <= high, 0 < early <= late <= 1 and flat_variance >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    GradualImprovement,
    DropThenRecover,
    EarlyPeakThenDegradation,
    RapidDropThenStabilization,
    StableNonImproving,
    HighlyFluctuating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preference {
    Preferred,
    Acceptable,
    Undesirable,
    Mixed,
}

impl Pattern {
    pub const ALL: [Pattern; 6] = [
        Pattern::GradualImprovement,
        Pattern::DropThenRecover,
        Pattern::EarlyPeakThenDegradation,
        Pattern::RapidDropThenStabilization,
        Pattern::StableNonImproving,
        Pattern::HighlyFluctuating,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Pattern::GradualImprovement => "gradual improvement",
            Pattern::DropThenRecover => "drop-then-recover",
            Pattern::EarlyPeakThenDegradation => "early peak then degradation",
            Pattern::RapidDropThenStabilization => "rapid drop then stabilization",
            Pattern::StableNonImproving => "stable but non-improving",
            Pattern::HighlyFluctuating => "highly fluctuating",
        }
    }

    pub fn from_label(label: &str) -> Option<Pattern> {
        Pattern::ALL.into_iter().find(|p| p.label() == label)
    }

    pub fn preference(self) -> Preference {
        match self {
            Pattern::GradualImprovement => Preference::Preferred,
            Pattern::DropThenRecover => Preference::Acceptable,
            Pattern::EarlyPeakThenDegradation | Pattern::RapidDropThenStabilization => Preference::Undesirable,
            Pattern::StableNonImproving | Pattern::HighlyFluctuating => Preference::Mixed,
        }
    }

    pub fn interpretation(self) -> &'static str {
        match self {
            Pattern::GradualImprovement => "effective accumulation",
            Pattern::DropThenRecover => "delayed recovery",
            Pattern::EarlyPeakThenDegradation => "unstable evolution",
            Pattern::RapidDropThenStabilization => "persistent degradation",
            Pattern::StableNonImproving => "limited memory effect",
            Pattern::HighlyFluctuating => "volatile memory dynamics",
        }
    }

    pub fn is_improvement(self) -> bool {
        matches!(self, Pattern::GradualImprovement | Pattern::DropThenRecover)
    }

    pub fn is_degradation(self) -> bool {
        matches!(self, Pattern::EarlyPeakThenDegradation | Pattern::RapidDropThenStabilization)
    }
}

impl std::fmt::Display for Pattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl Preference {
    pub fn label(self) -> &'static str {
        match self {
            Preference::Preferred => "preferred",
            Preference::Acceptable => "acceptable",
            Preference::Undesirable => "undesirable",
            Preference::Mixed => "mixed",
        }
    }
}

enum Family {
    Improvement,
    Degradation,
    Stable,
    Fluctuating,
}

fn family(mer: f64, ped: f64, th: &Thresholds) -> Family {
    match (mer >= th.high, ped >= th.high) {
        (false, false) => Family::Stable,
        (true, false) => Family::Improvement,
        (false, true) => Family::Degradation,
        // Both high: only a near balance is volatility, otherwise the larger
        // movement names the shape.
        (true, true) if (mer - ped).abs() < th.low => Family::Fluctuating,
        (true, true) if mer > ped => Family::Improvement,
        (true, true) => Family::Degradation,
    }
}

fn improvement(r_min: f64, th: &Thresholds) -> Pattern {
    if r_min < th.early {
        Pattern::GradualImprovement
    } else {
        Pattern::DropThenRecover
    }
}

/// Label from the three scalars alone. A degrading trajectory cannot be split
/// further without the curve and is reported as an early peak.
pub fn classify_trajectory(mer: f64, ped: f64, r_min: f64, thresholds: &Thresholds) -> Pattern {
    match family(mer, ped, thresholds) {
        Family::Stable => Pattern::StableNonImproving,
        Family::Fluctuating => Pattern::HighlyFluctuating,
        Family::Improvement => improvement(r_min, thresholds),
        Family::Degradation => Pattern::EarlyPeakThenDegradation,
    }
}

/// Variance of the last ⌈T/3⌉ values of the curve.
pub fn tail_variance(curve: &CumulativeCurve) -> f64 {
    let v = curve.values();
    let n = v.len().div_ceil(3);
    let tail = &v[v.len() - n..];
    let mean = tail.iter().sum::<f64>() / n as f64;
    tail.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64
}

/// Label from the full curve; a degrading curve whose tail has flattened is
/// told apart from one that keeps sliding.
pub fn classify_curve(curve: &CumulativeCurve, thresholds: &Thresholds) -> Pattern {
    let (m, p, r) = (mer(curve), ped(curve), r_min(curve));
    match family(m, p, thresholds) {
        Family::Degradation if tail_variance(curve) < thresholds.flat_variance => Pattern::RapidDropThenStabilization,
        _ => classify_trajectory(m, p, r, thresholds),
    }
}
