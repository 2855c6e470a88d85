use std::io::Write;

use remat_core::baselines::{chen_budget, chen_sqrt};
use remat_core::{solve, Algorithm, CostModel, PolicyTable, SolveRequest};

use crate::{check_cap, CliError, Result};

pub const DEFAULT_MEMORIES: [usize; 5] = [10, 50, 100, 500, 1000];
pub const DEFAULT_COMPARE_MEMORIES: [usize; 2] = [10, 20];
pub const DEFAULT_BETAS: [u32; 3] = [2, 5, 10];

pub const HEADER: [&str; 8] = [
    "figure",
    "t",
    "m",
    "algorithm",
    "total_forwards",
    "forwards_per_step",
    "memory_units",
    "simulated_time_per_step",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Figure {
    HsmCost,
    IsmCost,
    MsmCost,
    StrategyCompare,
    ChenMemoryRatio,
    ChenCostFixedMemory,
}

impl Figure {
    pub fn name(self) -> &'static str {
        match self {
            Figure::HsmCost => "hsm_cost",
            Figure::IsmCost => "ism_cost",
            Figure::MsmCost => "msm_cost",
            Figure::StrategyCompare => "strategy_compare",
            Figure::ChenMemoryRatio => "chen_memory_ratio",
            Figure::ChenCostFixedMemory => "chen_cost_fixed_memory",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CurveRequest {
    pub figure: Figure,
    pub ts: Vec<usize>,
    /// Budgets: hidden states for HSM figures, internal states otherwise.
    /// `None` picks the figure's default.
    pub memories: Option<Vec<usize>>,
    pub betas: Vec<u32>,
    pub model: CostModel,
    pub dedup: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub figure: &'static str,
    pub t: usize,
    pub m: usize,
    pub algorithm: String,
    pub total_forwards: u64,
    pub memory_units: f64,
    pub backward_ratio: f64,
}

impl Row {
    pub fn forwards_per_step(&self) -> f64 {
        self.total_forwards as f64 / self.t as f64
    }

    pub fn simulated_time_per_step(&self) -> f64 {
        self.forwards_per_step() + self.backward_ratio
    }

    fn record(&self) -> [String; 8] {
        [
            self.figure.to_owned(),
            self.t.to_string(),
            self.m.to_string(),
            self.algorithm.clone(),
            self.total_forwards.to_string(),
            format!("{:.6}", self.forwards_per_step()),
            format!("{:.6}", self.memory_units),
            format!("{:.6}", self.simulated_time_per_step()),
        ]
    }
}

pub fn write_csv(rows: &[Row], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

/// `t_min, t_min + step, ..` up to and including `t_max`.
pub fn t_range(t_min: usize, t_max: usize, step: usize) -> Result<Vec<usize>> {
    if t_min == 0 || step == 0 || t_min > t_max {
        return Err(CliError::Usage(format!(
            "invalid t range: min {t_min}, max {t_max}, step {step}"
        )));
    }
    Ok((t_min..=t_max).step_by(step).collect())
}

fn table(alg: Algorithm, t_max: usize, m_max: usize, model: CostModel) -> Result<PolicyTable> {
    Ok(solve(
        &SolveRequest::new(alg, t_max, m_max).with_model(model),
    )?)
}

fn mixed(dedup: bool) -> Algorithm {
    if dedup {
        Algorithm::MsmDedup
    } else {
        Algorithm::Msm
    }
}

pub fn curves(req: &CurveRequest) -> Result<Vec<Row>> {
    let t_max = req
        .ts
        .iter()
        .copied()
        .max()
        .ok_or_else(|| CliError::Usage("empty t range".into()))?;
    if req.ts.contains(&0) {
        return Err(CliError::Usage("t values must be at least 1".into()));
    }
    check_cap(t_max)?;
    let memories = req.memories.clone().unwrap_or_else(|| match req.figure {
        Figure::StrategyCompare => DEFAULT_COMPARE_MEMORIES.to_vec(),
        _ => DEFAULT_MEMORIES.to_vec(),
    });
    if memories.is_empty() || memories.contains(&0) {
        return Err(CliError::Usage("memory values must be at least 1".into()));
    }
    if req.betas.is_empty() || req.betas.contains(&0) {
        return Err(CliError::Usage("beta values must be at least 1".into()));
    }
    let m_top = *memories.iter().max().unwrap();
    let alpha = req.model.alpha as usize;
    let ratio = req.model.backward_ratio;
    let figure = req.figure.name();
    let row = |t, m, alg: &str, forwards, memory| Row {
        figure,
        t,
        m,
        algorithm: alg.to_owned(),
        total_forwards: forwards,
        memory_units: memory,
        backward_ratio: ratio,
    };
    let mut rows = Vec::new();

    match req.figure {
        Figure::HsmCost => {
            let p = table(Algorithm::Hsm, t_max, m_top, req.model)?;
            for &m in &memories {
                for &t in &req.ts {
                    rows.push(row(t, m, "HSM", p.cost(t, m).get(), m as f64));
                }
            }
        }
        Figure::IsmCost => {
            let p = table(Algorithm::Ism, t_max, m_top, req.model)?;
            for &m in &memories {
                for &t in &req.ts {
                    rows.push(row(t, m, "ISM", p.cost(t, m).get(), (m * alpha) as f64));
                }
            }
        }
        Figure::MsmCost => {
            let alg = mixed(req.dedup);
            let p = table(alg, t_max, m_top * alpha, req.model)?;
            for &m in &memories {
                for &t in &req.ts {
                    rows.push(row(
                        t,
                        m,
                        alg.name(),
                        p.cost(t, m * alpha).get(),
                        (m * alpha) as f64,
                    ));
                }
            }
        }
        Figure::StrategyCompare => {
            let alg = mixed(req.dedup);
            let hsm = table(Algorithm::Hsm, t_max, m_top * alpha, req.model)?;
            let ism = table(Algorithm::Ism, t_max, m_top, req.model)?;
            let msm = table(alg, t_max, m_top * alpha, req.model)?;
            for &m in &memories {
                let units = m * alpha;
                for &t in &req.ts {
                    rows.push(row(t, m, "HSM", hsm.cost(t, units).get(), units as f64));
                    rows.push(row(t, m, "ISM", ism.cost(t, m).get(), units as f64));
                    rows.push(row(
                        t,
                        m,
                        alg.name(),
                        msm.cost(t, units).get(),
                        units as f64,
                    ));
                }
            }
        }
        Figure::ChenMemoryRatio | Figure::ChenCostFixedMemory => {
            for &beta in &req.betas {
                let model = CostModel::with_backward_ratio(beta + 1, beta, ratio)?;
                let points = if req.figure == Figure::ChenMemoryRatio {
                    memory_at_fixed_cost(&req.ts, &model)?
                } else {
                    cost_at_fixed_memory(&req.ts, &model)?
                };
                for pt in points {
                    rows.push(row(pt.t, pt.m, pt.algorithm, pt.forwards, pt.memory));
                }
            }
        }
    }
    Ok(rows)
}

/// One point of a Chen comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct ChenPoint {
    pub t: usize,
    pub m: usize,
    pub algorithm: &'static str,
    pub forwards: u64,
    /// Memory relative to `sqrt(t) (1 + beta)` in the fixed-cost mode,
    /// absolute units in the fixed-memory mode.
    pub memory: f64,
}

pub fn chen_scale(t: usize, model: &CostModel) -> f64 {
    (t as f64).sqrt() * (1.0 + model.beta as f64)
}

/// Budget `floor(sqrt(t) (1 + beta))`, at least 1.
pub fn chen_fixed_budget(t: usize, model: &CostModel) -> usize {
    (chen_scale(t, model).floor() as usize).max(1)
}

/// Smallest budget at which the deduplicated mixed strategy averages at most
/// two forwards per step, alongside Chen's scheme at the same cost.
pub fn memory_at_fixed_cost(ts: &[usize], model: &CostModel) -> Result<Vec<ChenPoint>> {
    let t_max = ts.iter().copied().max().unwrap_or(1);
    check_cap(t_max)?;
    // Chen's own footprint already meets the cost target.
    let m_max = ts.iter().map(|&t| chen_budget(t, model)).max().unwrap_or(1);
    let p = table(Algorithm::MsmDedup, t_max, m_max, *model)?;
    let mut out = Vec::new();
    for &t in ts {
        let target = 2 * t as u64;
        let (mut lo, mut hi) = (1, m_max);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if p.cost(t, mid).get() <= target {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let scale = chen_scale(t, model);
        out.push(ChenPoint {
            t,
            m: lo,
            algorithm: "MSM_DEDUP",
            forwards: p.cost(t, lo).get(),
            memory: lo as f64 / scale,
        });
        let chen = chen_sqrt(t, model);
        out.push(ChenPoint {
            t,
            m: chen.memory_units as usize,
            algorithm: "CHEN_SQRT",
            forwards: chen.total_forwards,
            memory: chen.memory_units / scale,
        });
    }
    Ok(out)
}

/// Deduplicated mixed strategy at Chen's budget, alongside Chen's scheme.
pub fn cost_at_fixed_memory(ts: &[usize], model: &CostModel) -> Result<Vec<ChenPoint>> {
    let t_max = ts.iter().copied().max().unwrap_or(1);
    check_cap(t_max)?;
    let m_max = ts
        .iter()
        .map(|&t| chen_fixed_budget(t, model))
        .max()
        .unwrap_or(1);
    let p = table(Algorithm::MsmDedup, t_max, m_max, *model)?;
    let mut out = Vec::new();
    for &t in ts {
        let m = chen_fixed_budget(t, model);
        out.push(ChenPoint {
            t,
            m,
            algorithm: "MSM_DEDUP",
            forwards: p.cost(t, m).get(),
            memory: m as f64,
        });
        let chen = chen_sqrt(t, model);
        out.push(ChenPoint {
            t,
            m: chen.memory_units as usize,
            algorithm: "CHEN_SQRT",
            forwards: chen.total_forwards,
            memory: chen.memory_units,
        });
    }
    Ok(out)
}

/// Both Chen comparison modes for an explicit list of lengths.
pub fn compare_chen(ts: &[usize], beta: u32, backward_ratio: f64) -> Result<Vec<Row>> {
    if ts.is_empty() || ts.contains(&0) {
        return Err(CliError::Usage("t values must be at least 1".into()));
    }
    if beta == 0 {
        return Err(CliError::Usage("beta must be at least 1".into()));
    }
    let model = CostModel::with_backward_ratio(beta + 1, beta, backward_ratio)?;
    let mut rows = Vec::new();
    for (figure, points) in [
        (Figure::ChenMemoryRatio, memory_at_fixed_cost(ts, &model)?),
        (
            Figure::ChenCostFixedMemory,
            cost_at_fixed_memory(ts, &model)?,
        ),
    ] {
        rows.extend(points.into_iter().map(|pt| Row {
            figure: figure.name(),
            t: pt.t,
            m: pt.m,
            algorithm: pt.algorithm.to_owned(),
            total_forwards: pt.forwards,
            memory_units: pt.memory,
            backward_ratio,
        }));
    }
    Ok(rows)
}
