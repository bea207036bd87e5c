//! Brute-force reference for the metric engine.
//!
//! Deliberately shares no code with the engine: inputs are plain vectors,
//! every quantity is a double loop over exact rationals, and conversion to
//! `f64` happens once at the end. Meant for small inputs only.

use num_rational::Ratio;

type Q = Ratio<i64>;

/// Dense reference matrix. `cells[τ-1][c-1]` is Acc(x_τ; M_c); entries with
/// c < τ are ignored and `None` marks an unevaluated cell.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMatrix {
    pub baseline: Vec<Option<u8>>,
    pub cells: Vec<Vec<Option<u8>>>,
}

impl OracleMatrix {
    fn cell(&self, tau: usize, c: usize) -> Option<u8> {
        if c < tau || c > self.cells.len() {
            return None;
        }
        self.cells[tau - 1][c - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub curve: Vec<f64>,
    pub online_acc: f64,
    pub ped: f64,
    pub mer: f64,
    pub r_min: f64,
    /// (t, BWT, F exact, F approx), `None` where no task qualifies.
    pub horizons: Vec<(usize, Option<f64>, Option<f64>, Option<f64>)>,
}

fn to_f64(q: Q) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

fn cumulative(trace: &[u8]) -> Vec<Q> {
    (1..=trace.len())
        .map(|tau| {
            let mut hits = 0i64;
            for &a in &trace[..tau] {
                hits += i64::from(a);
            }
            Q::new(hits, tau as i64)
        })
        .collect()
}

fn average(terms: &[i64]) -> Option<f64> {
    if terms.is_empty() {
        None
    } else {
        let total: i64 = terms.iter().sum();
        Some(to_f64(Q::new(total, terms.len() as i64)))
    }
}

fn bwt_terms(m: &OracleMatrix, t: usize) -> Vec<i64> {
    let len = m.cells.len();
    let mut terms = Vec::new();
    for tau in 1..=len {
        if tau + t > len {
            continue;
        }
        if let (Some(b), Some(e)) = (m.baseline[tau - 1], m.cell(tau, tau + t)) {
            terms.push(i64::from(e) - i64::from(b));
        }
    }
    terms
}

fn f_exact_terms(m: &OracleMatrix, t: usize) -> Vec<i64> {
    let len = m.cells.len();
    let mut terms = Vec::new();
    for tau in 1..=len {
        if tau + t > len {
            continue;
        }
        let Some(b) = m.baseline[tau - 1] else { continue };
        let window: Vec<Option<u8>> = (tau + 1..=tau + t).map(|c| m.cell(tau, c)).collect();
        if window.iter().any(Option::is_none) {
            continue;
        }
        let mut best = i64::from(b);
        for v in window.iter().flatten() {
            if i64::from(*v) > best {
                best = i64::from(*v);
            }
        }
        terms.push(best - i64::from(m.cell(tau, tau + t).unwrap()));
    }
    terms
}

fn f_approx_terms(m: &OracleMatrix, t: usize, grid: &[usize]) -> Vec<i64> {
    let len = m.cells.len();
    let mut offsets: Vec<usize> = grid.iter().copied().filter(|&g| g >= 1 && g <= t).collect();
    if !offsets.contains(&t) {
        offsets.push(t);
    }
    let mut terms = Vec::new();
    for tau in 1..=len {
        if tau + t > len {
            continue;
        }
        let vals: Vec<Option<u8>> = offsets.iter().map(|&s| m.cell(tau, tau + s)).collect();
        if vals.iter().any(Option::is_none) {
            continue;
        }
        let best = vals.iter().flatten().map(|&v| i64::from(v)).max().unwrap();
        terms.push(best - i64::from(m.cell(tau, tau + t).unwrap()));
    }
    terms
}

/// Reference values for a non-empty binary trace and, optionally, a matrix
/// evaluated at each horizon in `grid`.
pub fn oracle_metrics(trace: &[u8], matrix: Option<&OracleMatrix>, grid: &[usize]) -> OracleReport {
    assert!(!trace.is_empty(), "oracle needs a non-empty trace");
    let cum = cumulative(trace);
    let last = *cum.last().unwrap();
    let mut hi = cum[0];
    let mut lo = cum[0];
    let mut lo_at = 1usize;
    for (i, &v) in cum.iter().enumerate() {
        if v > hi {
            hi = v;
        }
        if v < lo {
            lo = v;
            lo_at = i + 1;
        }
    }
    let horizons = match matrix {
        None => Vec::new(),
        Some(m) => grid
            .iter()
            .map(|&t| {
                (
                    t,
                    average(&bwt_terms(m, t)),
                    average(&f_exact_terms(m, t)),
                    average(&f_approx_terms(m, t, grid)),
                )
            })
            .collect(),
    };
    OracleReport {
        curve: cum.iter().map(|&q| to_f64(q)).collect(),
        online_acc: to_f64(last),
        ped: to_f64(hi - last),
        mer: to_f64(last - lo),
        r_min: to_f64(Q::new(lo_at as i64, trace.len() as i64)),
        horizons,
    }
}
