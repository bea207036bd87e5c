use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse grid of re-evaluation results Acc(x_τ; M_c) for τ ≤ c, where M_c is
/// the memory right after step c, plus the per-task baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMatrix {
    len: usize,
    columns: Vec<usize>,
    baseline: Vec<Option<u8>>,
    entries: BTreeMap<(usize, usize), u8>,
}

impl EvalMatrix {
    /// `online` is the trace A(1..T) and becomes the baseline.
    pub fn new(columns: Vec<usize>, online: &[u8]) -> Result<Self> {
        let len = online.len();
        if len == 0 {
            return Err(Error::Argument("evaluation matrix needs a non-empty stream".into()));
        }
        if columns.windows(2).any(|w| w[0] >= w[1]) || columns.iter().any(|&c| c == 0 || c > len) {
            return Err(Error::Argument(format!(
                "matrix columns must be strictly increasing steps in [1, {len}]"
            )));
        }
        if online.iter().any(|&v| v > 1) {
            return Err(Error::Argument("baseline values must be binary".into()));
        }
        Ok(EvalMatrix {
            len,
            columns,
            baseline: online.iter().map(|&v| Some(v)).collect(),
            entries: BTreeMap::new(),
        })
    }

    /// Fully dense matrix: every step is a column and `rows[τ-1][c-1]` holds
    /// Acc(x_τ; M_c) for c ≥ τ (earlier cells are ignored).
    pub fn dense(online: &[u8], rows: &[Vec<u8>]) -> Result<Self> {
        let t = online.len();
        let mut m = EvalMatrix::new((1..=t).collect(), online)?;
        if rows.len() != t || rows.iter().any(|r| r.len() != t) {
            return Err(Error::Argument(format!("dense matrix must be {t}x{t}")));
        }
        for (i, row) in rows.iter().enumerate() {
            for c in i + 1..=t {
                m.set(i + 1, c, row[c - 1])?;
            }
        }
        Ok(m)
    }

    pub fn set(&mut self, task: usize, column: usize, value: u8) -> Result<()> {
        if value > 1 {
            return Err(Error::Argument(format!("matrix value {value} is not binary")));
        }
        if self.columns.binary_search(&column).is_err() {
            return Err(Error::Argument(format!("step {column} is not a checkpoint column")));
        }
        if task == 0 || task > column {
            return Err(Error::Argument(format!(
                "task {task} cannot be evaluated at checkpoint {column}"
            )));
        }
        self.entries.insert((task, column), value);
        Ok(())
    }

    pub fn get(&self, task: usize, column: usize) -> Option<u8> {
        self.entries.get(&(task, column)).copied()
    }

    pub fn baseline(&self, task: usize) -> Option<u8> {
        task.checked_sub(1).and_then(|i| self.baseline.get(i).copied().flatten())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, u8)> + '_ {
        self.entries.iter().map(|(&(t, c), &v)| (t, c, v))
    }

    /// The alternative convention: baseline(τ) = Acc(x_τ; M_τ) with the
    /// post-update state, undefined where that cell was not evaluated.
    pub fn with_post_update_baseline(&self) -> Self {
        let mut m = self.clone();
        m.baseline = (1..=self.len).map(|t| self.get(t, t)).collect();
        m
    }

    fn tasks_for(&self, t: usize) -> std::ops::RangeInclusive<usize> {
        1..=self.len.saturating_sub(t)
    }
}

fn mean(sum: i64, n: usize, t: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::EmptyHorizon { horizon: t });
    }
    Ok(sum as f64 / n as f64)
}

fn check_horizon(t: usize) -> Result<()> {
    if t == 0 {
        return Err(Error::Argument("horizons must be positive".into()));
    }
    Ok(())
}

/// Mean of Acc(x_τ; M_{τ+t}) − baseline(τ) over every τ where both exist.
pub fn bwt(m: &EvalMatrix, t: usize) -> Result<f64> {
    check_horizon(t)?;
    let (mut sum, mut n) = (0i64, 0usize);
    for tau in m.tasks_for(t) {
        if let (Some(b), Some(e)) = (m.baseline(tau), m.get(tau, tau + t)) {
            sum += i64::from(e) - i64::from(b);
            n += 1;
        }
    }
    mean(sum, n, t)
}

/// BWT at the smallest horizon that has any admissible task, with that
/// horizon.
pub fn immediate_validity(m: &EvalMatrix) -> Result<(usize, f64)> {
    for t in 1..m.len() {
        match bwt(m, t) {
            Ok(v) => return Ok((t, v)),
            Err(Error::EmptyHorizon { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::EmptyHorizon { horizon: 1 })
}

/// Mean drop from the best value over the window [τ, τ+t] (baseline at τ)
/// to Acc(x_τ; M_{τ+t}). Only tasks whose whole window was evaluated count.
pub fn forgetting_exact(m: &EvalMatrix, t: usize) -> Result<f64> {
    check_horizon(t)?;
    let (mut sum, mut n) = (0i64, 0usize);
    'tasks: for tau in m.tasks_for(t) {
        let Some(mut best) = m.baseline(tau) else { continue };
        let mut end = 0;
        for c in tau + 1..=tau + t {
            let Some(v) = m.get(tau, c) else { continue 'tasks };
            best = best.max(v);
            end = v;
        }
        sum += i64::from(best - end);
        n += 1;
    }
    mean(sum, n, t)
}

/// As [`forgetting_exact`] but the window maximum only looks at offsets
/// taken from `horizons` (those ≤ t) plus t itself.
pub fn forgetting_approx(m: &EvalMatrix, t: usize, horizons: &[usize]) -> Result<f64> {
    check_horizon(t)?;
    let mut offsets: Vec<usize> = horizons.iter().copied().filter(|&h| h >= 1 && h <= t).collect();
    offsets.push(t);
    let (mut sum, mut n) = (0i64, 0usize);
    'tasks: for tau in m.tasks_for(t) {
        let mut best = 0u8;
        for &s in &offsets {
            let Some(v) = m.get(tau, tau + s) else { continue 'tasks };
            best = best.max(v);
        }
        let end = m.get(tau, tau + t).expect("offset t was checked");
        sum += i64::from(best - end);
        n += 1;
    }
    mean(sum, n, t)
}
