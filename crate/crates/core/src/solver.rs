//! Dynamic-programming construction of optimal policy tables.
//!
//! All three recurrences split a segment of length `t` at the first
//! checkpoint `y`:
//!
//! * hidden push:   `y + C(y, m) + C(t - y, m - 1)`, `1 <= y < t`
//! * internal push: `y + C(y - 1, m) + C(t - y, m - charge)`, `1 <= y <= t`
//!
//! where `charge` is 1 slot for ISM, `alpha` units for MSM, and `beta` units
//! for MSM with deduplication when `y = 1`. Tables are filled bottom-up by
//! increasing `m`, then increasing `t`; ties go to the smallest `y`, and in
//! the mixed tables to the internal push.

use crate::error::{Error, Result};
use crate::policy::{
    naive_cost, Algorithm, Cost, CostModel, Grid, MemoryBudget, MixedTables, PolicyTable, PushKind,
};

const INF: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveRequest {
    pub algorithm: Algorithm,
    pub t_max: usize,
    pub m_max: usize,
    /// Required for the mixed algorithms, ignored otherwise.
    pub cost_model: Option<CostModel>,
}

impl SolveRequest {
    pub fn new(algorithm: Algorithm, t_max: usize, m_max: usize) -> Self {
        SolveRequest {
            algorithm,
            t_max,
            m_max,
            cost_model: None,
        }
    }

    pub fn with_model(mut self, model: CostModel) -> Self {
        self.cost_model = Some(model);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.t_max == 0 || self.m_max == 0 {
            return Err(Error::config(format!(
                "t_max and m_max must be at least 1 (got t_max={}, m_max={})",
                self.t_max, self.m_max
            )));
        }
        if u32::try_from(self.t_max).is_err() {
            return Err(Error::Limit(format!(
                "t_max {} does not fit the split tables",
                self.t_max
            )));
        }
        if self.algorithm.is_mixed() {
            match &self.cost_model {
                Some(model) => model.validate()?,
                None => return Err(Error::config("mixed strategies need a cost model")),
            }
        }
        Ok(())
    }
}

/// Work counters of one table build.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SolveStats {
    /// Candidate split positions evaluated across all cells.
    pub inner_evaluations: u64,
}

pub fn solve(request: &SolveRequest) -> Result<PolicyTable> {
    solve_with_stats(request).map(|(table, _)| table)
}

pub fn solve_with_stats(request: &SolveRequest) -> Result<(PolicyTable, SolveStats)> {
    request.validate()?;
    let (t_max, m_max) = (request.t_max, request.m_max);
    let mut stats = SolveStats::default();
    let table = match request.algorithm {
        Algorithm::Hsm => build_hsm(t_max, m_max, &mut stats),
        Algorithm::Ism => build_ism(t_max, m_max, &mut stats),
        Algorithm::Msm | Algorithm::MsmDedup => {
            let model = request.cost_model.expect("validated");
            build_msm(
                t_max,
                m_max,
                model,
                request.algorithm == Algorithm::MsmDedup,
                &mut stats,
            )
        }
    };
    Ok((table, stats))
}

pub fn solve_hsm(t_max: usize, m_max: usize) -> Result<PolicyTable> {
    solve(&SolveRequest::new(Algorithm::Hsm, t_max, m_max))
}

pub fn solve_ism(t_max: usize, m_max: usize) -> Result<PolicyTable> {
    solve(&SolveRequest::new(Algorithm::Ism, t_max, m_max))
}

pub fn solve_msm(
    t_max: usize,
    budget: MemoryBudget,
    model: CostModel,
    dedup: bool,
) -> Result<PolicyTable> {
    let algorithm = if dedup {
        Algorithm::MsmDedup
    } else {
        Algorithm::Msm
    };
    solve(&SolveRequest::new(algorithm, t_max, budget.units()).with_model(model))
}

/// Column-major scratch tables: `cols[m][t]`.
struct Columns {
    cost: Vec<Vec<u64>>,
    split: Vec<Vec<u32>>,
}

impl Columns {
    fn new(t_max: usize, m_max: usize) -> Self {
        let mut cost = vec![vec![0u64; t_max + 1]; m_max + 1];
        // No memory: only the empty sequence is feasible.
        for c in cost[0].iter_mut().skip(1) {
            *c = INF;
        }
        Columns {
            cost,
            split: vec![vec![0u32; t_max + 1]; m_max + 1],
        }
    }
}

fn transpose<T: Copy>(cols: &[Vec<T>], fill: T) -> Grid<T> {
    let (m_cols, t_rows) = (cols.len(), cols[0].len());
    let mut grid = Grid::new(t_rows, m_cols, fill);
    for (m, col) in cols.iter().enumerate() {
        for (t, &v) in col.iter().enumerate() {
            grid.set(t, m, v);
        }
    }
    grid
}

fn cost_grid(cols: &[Vec<u64>]) -> Grid<Cost> {
    let raw = transpose(cols, 0);
    let mut grid = Grid::new(raw.rows(), raw.cols(), Cost::ZERO);
    for t in 0..raw.rows() {
        for m in 0..raw.cols() {
            grid.set(t, m, Cost::from_raw(raw.get(t, m)));
        }
    }
    grid
}

#[inline]
fn add3(y: usize, a: u64, b: u64) -> u64 {
    a.saturating_add(b).saturating_add(y as u64)
}

fn build_hsm(t_max: usize, m_max: usize, stats: &mut SolveStats) -> PolicyTable {
    let mut cols = Columns::new(t_max, m_max);
    for m in 1..=m_max {
        let (lo, hi) = cols.cost.split_at_mut(m);
        let (prev, cur) = (&lo[m - 1], &mut hi[0]);
        let split = &mut cols.split[m];
        for t in 1..=t_max {
            if m == 1 {
                cur[t] = naive_cost(t);
                split[t] = 0;
            } else if m >= t {
                cur[t] = 2 * t as u64 - 1;
                split[t] = u32::from(t > 1);
            } else {
                let (mut best, mut arg) = (INF, 0);
                for y in 1..t {
                    let q = add3(y, cur[y], prev[t - y]);
                    if q < best {
                        best = q;
                        arg = y;
                    }
                }
                stats.inner_evaluations += (t - 1) as u64;
                cur[t] = best;
                split[t] = arg as u32;
            }
        }
    }
    PolicyTable {
        algorithm: Algorithm::Hsm,
        t_max,
        m_max,
        cost_model: None,
        cost: cost_grid(&cols.cost),
        split: transpose(&cols.split, 0),
        mixed: None,
    }
}

fn build_ism(t_max: usize, m_max: usize, stats: &mut SolveStats) -> PolicyTable {
    let mut cols = Columns::new(t_max, m_max);
    for m in 1..=m_max {
        let (lo, hi) = cols.cost.split_at_mut(m);
        let (prev, cur) = (&lo[m - 1], &mut hi[0]);
        let split = &mut cols.split[m];
        for t in 1..=t_max {
            if m == 1 {
                // Only the last step can be stored: plain recomputation.
                cur[t] = naive_cost(t);
                split[t] = t as u32;
            } else if m >= t {
                cur[t] = t as u64;
                split[t] = 1;
            } else {
                let (mut best, mut arg) = (INF, 0);
                for y in 1..=t {
                    let q = add3(y, cur[y - 1], prev[t - y]);
                    if q < best {
                        best = q;
                        arg = y;
                    }
                }
                stats.inner_evaluations += t as u64;
                cur[t] = best;
                split[t] = arg as u32;
            }
        }
    }
    PolicyTable {
        algorithm: Algorithm::Ism,
        t_max,
        m_max,
        cost_model: None,
        cost: cost_grid(&cols.cost),
        split: transpose(&cols.split, 0),
        mixed: None,
    }
}

fn build_msm(
    t_max: usize,
    m_max: usize,
    model: CostModel,
    dedup: bool,
    stats: &mut SolveStats,
) -> PolicyTable {
    let alpha = model.alpha as usize;
    let first_charge = if dedup { model.beta as usize } else { alpha };

    let mut cols = Columns::new(t_max, m_max);
    let mut d1 = vec![vec![0u32; t_max + 1]; m_max + 1];
    let mut d2 = vec![vec![0u32; t_max + 1]; m_max + 1];
    let mut kind: Vec<Vec<Option<PushKind>>> = vec![vec![None; t_max + 1]; m_max + 1];

    for m in 1..=m_max {
        let (lo, hi) = cols.cost.split_at_mut(m);
        let cur = &mut hi[0];
        let prev = &lo[m - 1];
        // Column left after an internal push; `None` is a negative budget.
        let after_internal = |charge: usize| m.checked_sub(charge).map(|r| &lo[r]);
        let after_first = after_internal(first_charge);
        let after_other = after_internal(alpha);

        for t in 1..=t_max {
            let (cost, h, i, k) = if m == 1 {
                (naive_cost(t), 0, 0, None)
            } else if m >= alpha * t {
                (t as u64, u32::from(t > 1), 1, Some(PushKind::Internal))
            } else if t == 1 {
                // Below alpha units a single step either fits a deduplicated
                // internal push or is recomputed directly; both cost 1.
                match after_first {
                    Some(_) => (1, 0, 1, Some(PushKind::Internal)),
                    None => (1, 0, 0, None),
                }
            } else {
                let (mut q1, mut y1) = (INF, 0);
                for y in 1..t {
                    let q = add3(y, cur[y], prev[t - y]);
                    if q < q1 {
                        q1 = q;
                        y1 = y;
                    }
                }
                let (mut q2, mut y2) = (INF, 0);
                for y in 1..=t {
                    let rest = if y == 1 { after_first } else { after_other };
                    if let Some(col) = rest {
                        let q = add3(y, cur[y - 1], col[t - y]);
                        if q < q2 {
                            q2 = q;
                            y2 = y;
                        }
                    }
                }
                stats.inner_evaluations += (2 * t - 1) as u64;
                if q2 <= q1 {
                    (q2, y1 as u32, y2 as u32, Some(PushKind::Internal))
                } else {
                    (q1, y1 as u32, y2 as u32, Some(PushKind::Hidden))
                }
            };
            cur[t] = cost;
            d1[m][t] = h;
            d2[m][t] = i;
            kind[m][t] = k;
            cols.split[m][t] = match k {
                None => 0,
                Some(PushKind::Hidden) => h,
                Some(PushKind::Internal) => i,
            };
        }
    }

    PolicyTable {
        algorithm: if dedup {
            Algorithm::MsmDedup
        } else {
            Algorithm::Msm
        },
        t_max,
        m_max,
        cost_model: Some(model),
        cost: cost_grid(&cols.cost),
        split: transpose(&cols.split, 0),
        mixed: Some(MixedTables {
            split_hidden: transpose(&d1, 0),
            split_internal: transpose(&d2, 0),
            kind: transpose(&kind, None),
        }),
    }
}
