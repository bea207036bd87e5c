use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-step binary correctness A(1..T).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnlineTrace(Vec<u8>);

impl OnlineTrace {
    pub fn new(values: Vec<u8>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("online trace must not be empty".into()));
        }
        if let Some(pos) = values.iter().position(|&v| v > 1) {
            return Err(Error::Argument(format!("online trace value at step {} is not binary", pos + 1)));
        }
        Ok(OnlineTrace(values))
    }

    pub fn values(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Prefix means of an online trace; never empty.
///
/// The hit counts are kept alongside the means so that extrema and
/// differences are decided on exact fractions rather than rounded values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeCurve {
    values: Vec<f64>,
    hits: Vec<u64>,
}

/// hits / steps, with steps = position + 1.
type Frac = (u64, u64);

fn less(a: Frac, b: Frac) -> bool {
    u128::from(a.0) * u128::from(b.1) < u128::from(b.0) * u128::from(a.1)
}

/// a − b as one correctly rounded division.
fn diff(a: Frac, b: Frac) -> f64 {
    let num = i128::from(a.0) * i128::from(b.1) - i128::from(b.0) * i128::from(a.1);
    num as f64 / (u128::from(a.1) * u128::from(b.1)) as f64
}

impl CumulativeCurve {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn frac(&self, i: usize) -> Frac {
        (self.hits[i], i as u64 + 1)
    }

    fn last(&self) -> Frac {
        self.frac(self.len() - 1)
    }

    fn max(&self) -> Frac {
        (1..self.len()).map(|i| self.frac(i)).fold(self.frac(0), |m, f| if less(m, f) { f } else { m })
    }

    /// Smallest value and its first 0-based position.
    fn argmin(&self) -> (usize, Frac) {
        let mut best = (0, self.frac(0));
        for i in 1..self.len() {
            if less(self.frac(i), best.1) {
                best = (i, self.frac(i));
            }
        }
        best
    }
}

/// Each value is an exact integer count divided by the step index, so the
/// result is the correctly rounded prefix mean.
pub fn cumulative_curve(trace: &OnlineTrace) -> CumulativeCurve {
    let mut total = 0u64;
    let hits: Vec<u64> = trace
        .values()
        .iter()
        .map(|&a| {
            total += u64::from(a);
            total
        })
        .collect();
    let values = hits.iter().enumerate().map(|(i, &h)| h as f64 / (i + 1) as f64).collect();
    CumulativeCurve { values, hits }
}

pub fn online_acc(curve: &CumulativeCurve) -> f64 {
    curve.values[curve.len() - 1]
}

/// Peak-to-end drop, max Ā − Ā(T).
pub fn ped(curve: &CumulativeCurve) -> f64 {
    diff(curve.max(), curve.last())
}

/// Minimum-to-end recovery, Ā(T) − min Ā.
pub fn mer(curve: &CumulativeCurve) -> f64 {
    diff(curve.last(), curve.argmin().1)
}

/// Position of the first minimum divided by T; in (0, 1].
pub fn r_min(curve: &CumulativeCurve) -> f64 {
    (curve.argmin().0 + 1) as f64 / curve.len() as f64
}

/// Hold-out accuracy H(τ) at the checkpoints where it was evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutTrace {
    points: Vec<(usize, f64)>,
}

impl HoldoutTrace {
    pub fn new(points: Vec<(usize, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Argument("hold-out trace needs at least one point".into()));
        }
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Argument("hold-out checkpoints must be strictly increasing".into()));
        }
        if let Some((step, h)) = points.iter().find(|(s, h)| *s == 0 || !(0.0..=1.0).contains(h)) {
            return Err(Error::Argument(format!("invalid hold-out point ({step}, {h})")));
        }
        Ok(HoldoutTrace { points })
    }

    pub fn points(&self) -> &[(usize, f64)] {
        &self.points
    }
}

/// H(T); the trace must end at step `t_len`.
pub fn holdout_final(trace: &HoldoutTrace, t_len: usize) -> Result<f64> {
    let &(step, h) = trace.points.last().expect("hold-out trace is non-empty");
    if step != t_len {
        return Err(Error::Argument(format!(
            "hold-out trace ends at step {step}, not at the final step {t_len}"
        )));
    }
    Ok(h)
}

/// Least-squares slope of H against normalized time τ/T.
pub fn trend_ho(trace: &HoldoutTrace, t_len: usize) -> Result<f64> {
    if t_len == 0 {
        return Err(Error::Argument("stream length must be positive".into()));
    }
    let pts = &trace.points;
    if pts.len() < 2 {
        return Err(Error::Argument("trend needs at least two hold-out points".into()));
    }
    let n = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|&(s, _)| s as f64 / t_len as f64).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, &(_, y)) in xs.iter().zip(pts) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == 0.0 {
        return Err(Error::Argument("all hold-out points share one time coordinate".into()));
    }
    Ok(sxy / sxx)
}
