use serde::{Deserialize, Serialize};

use super::DiagnosticReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    MinMax,
    Rank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Online,
    Holdout,
    Transfer,
    Forgetting,
    Efficiency,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::Online,
        Dimension::Holdout,
        Dimension::Transfer,
        Dimension::Forgetting,
        Dimension::Efficiency,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Dimension::Online => "online",
            Dimension::Holdout => "holdout",
            Dimension::Transfer => "transfer",
            Dimension::Forgetting => "forgetting",
            Dimension::Efficiency => "efficiency",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionScore {
    pub dimension: Dimension,
    /// Absent when no metric of this dimension is available for every method.
    pub score: Option<f64>,
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodProfile {
    pub method: String,
    pub dimensions: Vec<DimensionScore>,
}

impl MethodProfile {
    pub fn get(&self, d: Dimension) -> &DimensionScore {
        self.dimensions.iter().find(|s| s.dimension == d).expect("every dimension is scored")
    }
}

struct Metric {
    dimension: Dimension,
    higher_is_better: bool,
    values: Vec<Option<f64>>,
}

fn metrics(reports: &[DiagnosticReport]) -> Vec<Metric> {
    let col = |dimension, higher_is_better, f: &dyn Fn(&DiagnosticReport) -> Option<f64>| Metric {
        dimension,
        higher_is_better,
        values: reports.iter().map(f).collect(),
    };
    let mut out = vec![
        col(Dimension::Online, true, &|r| Some(r.online_acc)),
        col(Dimension::Online, false, &|r| Some(r.ped)),
        col(Dimension::Online, true, &|r| Some(r.mer)),
        col(Dimension::Online, false, &|r| Some(r.r_min)),
        col(Dimension::Holdout, true, &|r| r.primary_holdout().map(|h| h.holdout_acc)),
        col(Dimension::Holdout, true, &|r| r.primary_holdout().and_then(|h| h.trend_ho)),
        col(Dimension::Transfer, true, &|r| r.iv),
    ];
    let mut horizons: Vec<usize> = reports.iter().flat_map(|r| r.horizons.iter().map(|h| h.t)).collect();
    horizons.sort_unstable();
    horizons.dedup();
    for t in horizons {
        out.push(col(Dimension::Transfer, true, &|r| r.horizon(t).and_then(|h| h.bwt)));
        out.push(col(Dimension::Forgetting, false, &|r| r.horizon(t).and_then(|h| h.forgetting())));
    }
    out.push(col(Dimension::Efficiency, false, &|r| Some(r.tokens_total as f64)));
    out.push(col(Dimension::Efficiency, false, &|r| Some(r.runtime_s)));
    out
}

/// Competition rank, 1 = best; equal values share the better rank.
fn competition_ranks(values: &[f64]) -> Vec<usize> {
    values
        .iter()
        .map(|v| 1 + values.iter().filter(|w| *w > v).count())
        .collect()
}

fn normalize(values: &[f64], higher_is_better: bool, scheme: Normalization) -> Vec<f64> {
    let oriented: Vec<f64> = values.iter().map(|&v| if higher_is_better { v } else { -v }).collect();
    let n = oriented.len();
    match scheme {
        Normalization::MinMax => {
            let lo = oriented.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = oriented.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi == lo {
                vec![0.5; n]
            } else {
                oriented.iter().map(|v| (v - lo) / (hi - lo)).collect()
            }
        }
        Normalization::Rank => {
            if oriented.iter().all(|v| *v == oriented[0]) {
                return vec![0.5; n];
            }
            competition_ranks(&oriented)
                .into_iter()
                .map(|r| (n - r) as f64 / (n - 1) as f64)
                .collect()
        }
    }
}

/// Normalize each metric across methods, average within each dimension, and
/// rank. Metrics missing for any method are left out for all of them.
pub fn rank_profiles(reports: &[DiagnosticReport], scheme: Normalization) -> Result<Vec<MethodProfile>> {
    if reports.len() < 2 {
        return Err(Error::Argument("ranking needs at least two methods".into()));
    }
    let n = reports.len();
    let mut sums = vec![[0.0f64; 5]; n];
    let mut counts = [0usize; 5];
    for m in metrics(reports) {
        let Some(values) = m.values.iter().copied().collect::<Option<Vec<f64>>>() else { continue };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("metric values must be finite".into()));
        }
        let d = Dimension::ALL.iter().position(|&d| d == m.dimension).expect("known dimension");
        counts[d] += 1;
        for (i, v) in normalize(&values, m.higher_is_better, scheme).into_iter().enumerate() {
            sums[i][d] += v;
        }
    }
    let scores: Vec<[Option<f64>; 5]> = sums
        .iter()
        .map(|s| std::array::from_fn(|d| (counts[d] > 0).then(|| s[d] / counts[d] as f64)))
        .collect();
    let ranks: Vec<Option<Vec<usize>>> = (0..5)
        .map(|d| {
            let col: Option<Vec<f64>> = scores.iter().map(|s| s[d]).collect();
            col.map(|c| competition_ranks(&c))
        })
        .collect();
    Ok(reports
        .iter()
        .enumerate()
        .map(|(i, r)| MethodProfile {
            method: r.method.clone(),
            dimensions: Dimension::ALL
                .iter()
                .enumerate()
                .map(|(d, &dimension)| DimensionScore {
                    dimension,
                    score: scores[i][d],
                    rank: ranks[d].as_ref().map(|rs| rs[i]),
                })
                .collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMetric {
    OnlineAcc,
    HoldoutAcc,
    TokensTotal,
    Runtime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Objective {
    pub metric: ObjectiveMetric,
    pub sense: Sense,
}

impl Objective {
    /// Accuracies are maximized, costs minimized.
    pub fn natural(metric: ObjectiveMetric) -> Self {
        let sense = match metric {
            ObjectiveMetric::OnlineAcc | ObjectiveMetric::HoldoutAcc => Sense::Maximize,
            ObjectiveMetric::TokensTotal | ObjectiveMetric::Runtime => Sense::Minimize,
        };
        Objective { metric, sense }
    }

    fn value(&self, r: &DiagnosticReport) -> Result<f64> {
        let v = match self.metric {
            ObjectiveMetric::OnlineAcc => Some(r.online_acc),
            ObjectiveMetric::HoldoutAcc => r.primary_holdout().map(|h| h.holdout_acc),
            ObjectiveMetric::TokensTotal => Some(r.tokens_total as f64),
            ObjectiveMetric::Runtime => Some(r.runtime_s),
        };
        let v = v.ok_or_else(|| Error::Argument(format!("{} has no hold-out accuracy", r.method)))?;
        Ok(match self.sense {
            Sense::Maximize => v,
            Sense::Minimize => -v,
        })
    }
}

/// Methods no other method dominates: at least as good on every objective
/// and strictly better on one. Input order is preserved.
pub fn pareto_filter(reports: &[DiagnosticReport], objectives: &[Objective]) -> Result<Vec<String>> {
    if objectives.is_empty() {
        return Err(Error::Argument("Pareto filter needs at least one objective".into()));
    }
    let points = reports
        .iter()
        .map(|r| objectives.iter().map(|o| o.value(r)).collect::<Result<Vec<f64>>>())
        .collect::<Result<Vec<_>>>()?;
    let dominates = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y);
    Ok(reports
        .iter()
        .zip(&points)
        .filter(|(_, p)| !points.iter().any(|q| dominates(q, p)))
        .map(|(r, _)| r.method.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{HoldoutSummary, HorizonValues, Pattern};
    use crate::stream::DistributionTag;

    pub(crate) fn report(method: &str, acc: f64, holdout: f64, tokens: u64) -> DiagnosticReport {
        DiagnosticReport {
            method: method.into(),
            dataset: "d".into(),
            trace: vec![],
            curve: vec![],
            online_acc: acc,
            ped: 1.0 - acc,
            mer: acc,
            r_min: 1.0 - acc,
            holdout: vec![HoldoutSummary {
                set: "d_id".into(),
                tag: DistributionTag::InDistribution,
                points: vec![],
                holdout_acc: holdout,
                trend_ho: Some(holdout),
            }],
            iv: Some(acc),
            horizons: vec![HorizonValues {
                t: 1,
                bwt: Some(acc),
                f_exact: None,
                f_approx: Some(1.0 - acc),
            }],
            tokens_total: tokens,
            runtime_s: tokens as f64 / 100.0,
            pattern: Pattern::StableNonImproving,
        }
    }

    #[test]
    fn dominant_method_ranks_first_everywhere() {
        let rs = [report("a", 0.9, 0.8, 100), report("b", 0.4, 0.3, 900)];
        for scheme in [Normalization::MinMax, Normalization::Rank] {
            let p = rank_profiles(&rs, scheme).unwrap();
            for d in Dimension::ALL {
                assert_eq!((p[0].get(d).rank, p[1].get(d).rank), (Some(1), Some(2)), "{d:?}");
            }
        }
    }

    #[test]
    fn identical_reports_tie_at_half() {
        let rs = [report("a", 0.5, 0.5, 10), report("b", 0.5, 0.5, 10), report("c", 0.5, 0.5, 10)];
        let p = rank_profiles(&rs, Normalization::MinMax).unwrap();
        for m in &p {
            for d in &m.dimensions {
                assert_eq!((d.score, d.rank), (Some(0.5), Some(1)));
            }
        }
        assert_eq!(pareto_filter(&rs, &[Objective::natural(ObjectiveMetric::OnlineAcc)]).unwrap().len(), 3);
    }

    #[test]
    fn missing_metric_is_dropped_for_everyone() {
        let mut b = report("b", 0.4, 0.3, 900);
        b.holdout.clear();
        let p = rank_profiles(&[report("a", 0.9, 0.8, 100), b], Normalization::MinMax).unwrap();
        assert_eq!(p[0].get(Dimension::Holdout).score, None);
        assert_eq!(p[0].get(Dimension::Online).rank, Some(1));
    }

    #[test]
    fn pareto_examples() {
        let best = [report("a", 0.9, 0.9, 10), report("b", 0.5, 0.5, 20)];
        let all = [
            Objective::natural(ObjectiveMetric::OnlineAcc),
            Objective::natural(ObjectiveMetric::HoldoutAcc),
            Objective::natural(ObjectiveMetric::TokensTotal),
            Objective::natural(ObjectiveMetric::Runtime),
        ];
        assert_eq!(pareto_filter(&best, &all).unwrap(), ["a"]);
        let trade = [report("a", 0.9, 0.9, 500), report("b", 0.5, 0.5, 20)];
        assert_eq!(pareto_filter(&trade, &all).unwrap(), ["a", "b"]);
        assert!(pareto_filter(&trade, &[]).is_err());
        assert!(rank_profiles(&trade[..1], Normalization::MinMax).is_err());
    }
}
