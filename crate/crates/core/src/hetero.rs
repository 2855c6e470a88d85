//! Hidden-state checkpointing for chains whose layers differ in forward cost
//! `u`, stored hidden-state size `s`, and working size `p`.
//!
//! `cost(t, m, x)` is the cheapest way to backpropagate through layers
//! `x + 1 ..= x + t` starting from the stored output of layer `x`, with `m`
//! units shared by the checkpoints above that entry and the working layer.
//! A layer can only run when its working size fits beside the checkpoints
//! stored below it. With no room for any checkpoint a span is recomputed
//! from its entry, so a chain of unit layers reproduces the HSM table.

use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Largest chain [`solve_hetero`] accepts; the build is cubic in its length.
pub const DEFAULT_MAX_LAYERS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
pub struct Layer {
    /// Forward cost.
    pub u: f64,
    /// Size of the layer's output hidden state.
    pub s: usize,
    /// Working size while the layer runs.
    pub p: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainSpec {
    layers: Vec<Layer>,
    prefix: Vec<f64>,
}

impl ChainSpec {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::validation("chain must have at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if !(l.u.is_finite() && l.u > 0.0) || l.s == 0 || l.p == 0 {
                return Err(Error::validation(format!(
                    "layer {} must have positive u, s and p, got u={}, s={}, p={}",
                    i + 1,
                    l.u,
                    l.s,
                    l.p
                )));
            }
        }
        let mut prefix = Vec::with_capacity(layers.len() + 1);
        prefix.push(0.0);
        for l in &layers {
            prefix.push(prefix.last().unwrap() + l.u);
        }
        Ok(ChainSpec { layers, prefix })
    }

    /// `n` identical layers.
    pub fn uniform(n: usize, u: f64, s: usize, p: usize) -> Result<Self> {
        Self::new(vec![Layer { u, s, p }; n])
    }

    /// Reads CSV with a `u,s,p` header, one layer per record.
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut layers = Vec::new();
        for (i, rec) in rdr.deserialize::<Layer>().enumerate() {
            let layer = rec.map_err(|e| Error::Parse {
                field: format!("layer {}", i + 1),
                message: e.to_string(),
            })?;
            layers.push(layer);
        }
        Self::new(layers)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Layer `i`, 1-based.
    pub fn layer(&self, i: usize) -> &Layer {
        &self.layers[i - 1]
    }

    fn check_span(&self, x: usize, y: usize) -> Result<()> {
        if y == 0 || x + y > self.len() {
            return Err(Error::config(format!(
                "span x={x}, y={y} is outside a chain of {} layers",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Forward cost of layers `x + 1 ..= x + y`.
pub fn cumulative_cost(chain: &ChainSpec, x: usize, y: usize) -> Result<f64> {
    chain.check_span(x, y)?;
    Ok(span_cost(chain, x, y))
}

fn span_cost(chain: &ChainSpec, x: usize, y: usize) -> f64 {
    chain.prefix[x + y] - chain.prefix[x]
}

/// 0 when every layer in `x + 1 ..= x + y` fits in `m`, infinity otherwise.
pub fn feasibility_gate(chain: &ChainSpec, x: usize, y: usize, m: usize) -> Result<f64> {
    chain.check_span(x, y)?;
    let widest = chain.layers[x..x + y].iter().map(|l| l.p).max().unwrap();
    Ok(gate(widest, m))
}

fn gate(widest: usize, m: usize) -> f64 {
    if widest <= m {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Cost of running each prefix of the span from its entry.
fn naive_span(chain: &ChainSpec, x: usize, t: usize) -> f64 {
    (1..=t)
        .map(|j| (t - j + 1) as f64 * chain.layer(x + j).u)
        .sum()
}

#[derive(Clone, Debug)]
pub struct HeteroPolicy {
    chain: ChainSpec,
    m_max: usize,
    /// Start of each `t` block in the flat tables; block `t` has one row of
    /// `m_max + 1` cells per entry `x` in `0 ..= n - t`.
    offsets: Vec<usize>,
    cost: Vec<f64>,
    split: Vec<u32>,
}

impl HeteroPolicy {
    pub fn chain(&self) -> &ChainSpec {
        &self.chain
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    fn index(&self, t: usize, m: usize, x: usize) -> usize {
        self.offsets[t] + x * (self.m_max + 1) + m
    }

    /// Cost with the boundary conventions applied: zero for empty or
    /// overhanging spans, infinite for negative budgets.
    pub fn cost(&self, t: usize, m: i64, x: usize) -> f64 {
        if t == 0 || x + t > self.chain.len() {
            return 0.0;
        }
        if m < 0 {
            return f64::INFINITY;
        }
        let m = (m as usize).min(self.m_max);
        self.cost[self.index(t, m, x)]
    }

    /// Layer count before the first checkpoint, 0 when the span is simply
    /// recomputed from its entry.
    pub fn split(&self, t: usize, m: usize, x: usize) -> usize {
        if t == 0 || x + t > self.chain.len() {
            return 0;
        }
        self.split[self.index(t, m.min(self.m_max), x)] as usize
    }

    /// Walks the recorded decisions and sums the forward costs they incur.
    pub fn replay(&self, t: usize, m: usize, x: usize) -> f64 {
        if t == 0 {
            return 0.0;
        }
        if !self.cost(t, m as i64, x).is_finite() {
            return f64::INFINITY;
        }
        match self.split(t, m, x) {
            0 => naive_span(&self.chain, x, t),
            y => {
                let s = self.chain.layer(x + y).s;
                span_cost(&self.chain, x, y)
                    + self.replay(t - y, m - s, x + y)
                    + self.replay(y, m, x)
            }
        }
    }
}

/// Builds optimal tables for every suffix of `chain` and budgets up to
/// `m_max`, refusing chains longer than [`DEFAULT_MAX_LAYERS`].
pub fn solve_hetero(chain: &ChainSpec, m_max: usize) -> Result<HeteroPolicy> {
    solve_hetero_with(chain, m_max, DEFAULT_MAX_LAYERS)
}

pub fn solve_hetero_with(
    chain: &ChainSpec,
    m_max: usize,
    max_layers: usize,
) -> Result<HeteroPolicy> {
    let n = chain.len();
    if n > max_layers {
        return Err(Error::Limit(format!(
            "chain has {n} layers; the heterogeneous solver is capped at {max_layers} (raise the cap to force)"
        )));
    }
    let min_p = chain.layers.iter().map(|l| l.p).min().unwrap();
    if min_p > m_max {
        return Err(Error::Infeasible {
            m_max,
            min_budget: min_p,
        });
    }

    let width = m_max + 1;
    let mut offsets = vec![0; n + 1];
    let mut total = 0;
    for (t, off) in offsets.iter_mut().enumerate().skip(1) {
        *off = total;
        total += (n - t + 1) * width;
    }
    let mut policy = HeteroPolicy {
        chain: chain.clone(),
        m_max,
        offsets,
        cost: vec![0.0; total],
        split: vec![0; total],
    };

    for t in 1..=n {
        for x in 0..=n - t {
            let stored: usize = (x + 1..x + t).map(|i| chain.layer(i).s).sum();
            let widest = (x + 1..=x + t).map(|i| chain.layer(i).p).max().unwrap();
            // Each layer must fit beside the checkpoints stored below it.
            let store_all_needs = (1..=t)
                .scan(0, |below, j| {
                    let l = chain.layer(x + j);
                    let need = l.p + *below;
                    *below += l.s;
                    Some(need)
                })
                .max()
                .unwrap()
                .max(stored);
            let naive = naive_span(chain, x, t);
            let plentiful = chain.layer(x + t).u + 2.0 * span_cost(chain, x, t - 1);
            for m in 0..=m_max {
                let (cost, split) = if t == 1 {
                    (chain.layer(x + 1).u + gate(widest, m), 0)
                } else if m >= store_all_needs {
                    (plentiful, 1)
                } else {
                    best_split(&policy, t, m, x, naive + gate(widest, m))
                };
                let i = policy.index(t, m, x);
                policy.cost[i] = cost;
                policy.split[i] = split;
            }
        }
    }
    Ok(policy)
}

fn best_split(policy: &HeteroPolicy, t: usize, m: usize, x: usize, recompute: f64) -> (f64, u32) {
    let chain = &policy.chain;
    let mut best = (recompute, 0u32);
    let mut widest = 0;
    for y in 1..t {
        widest = widest.max(chain.layer(x + y).p);
        if widest > m {
            break;
        }
        let s = chain.layer(x + y).s as i64;
        let q = span_cost(chain, x, y)
            + policy.cost(t - y, m as i64 - s, x + y)
            + policy.cost(y, m as i64, x);
        if q < best.0 {
            best = (q, y as u32);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::solve_hsm;

    fn chain(u: &[f64]) -> ChainSpec {
        ChainSpec::new(u.iter().map(|&u| Layer { u, s: 1, p: 1 }).collect()).unwrap()
    }

    #[test]
    fn cumulative_cost_examples() {
        let c = ChainSpec::uniform(5, 1.0, 1, 1).unwrap();
        assert_eq!(cumulative_cost(&c, 0, 5).unwrap(), 5.0);
        let c = chain(&[2.0, 3.0, 4.0]);
        assert_eq!(cumulative_cost(&c, 1, 2).unwrap(), 7.0);
        assert_eq!(cumulative_cost(&c, 0, 3).unwrap(), 9.0);
        assert!(cumulative_cost(&c, 2, 2).is_err());
        assert!(cumulative_cost(&c, 0, 0).is_err());
    }

    #[test]
    fn gate_examples() {
        let c = ChainSpec::new(vec![
            Layer { u: 1.0, s: 1, p: 1 },
            Layer { u: 1.0, s: 1, p: 9 },
            Layer { u: 1.0, s: 1, p: 1 },
        ])
        .unwrap();
        assert_eq!(feasibility_gate(&c, 0, 1, 1).unwrap(), 0.0);
        assert_eq!(feasibility_gate(&c, 1, 2, 8).unwrap(), f64::INFINITY);
        for x in 0..3 {
            for y in 1..=3 - x {
                assert_eq!(feasibility_gate(&c, x, y, 9).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn homogeneous_chain_matches_hsm() {
        let c = ChainSpec::uniform(40, 1.0, 1, 1).unwrap();
        let h = solve_hetero(&c, 8).unwrap();
        let hsm = solve_hsm(40, 8).unwrap();
        for t in 1..=40 {
            assert_eq!(h.cost(t, 0, 0), f64::INFINITY);
            for m in 1..=8 {
                assert_eq!(
                    h.cost(t, m as i64, 0),
                    hsm.cost(t, m).get() as f64,
                    "t={t} m={m}"
                );
                // Every suffix of a uniform chain behaves the same.
                assert_eq!(h.cost(t, m as i64, 40 - t), h.cost(t, m as i64, 0));
            }
        }
    }

    #[test]
    fn boundaries() {
        let c = ChainSpec::uniform(4, 1.0, 1, 1).unwrap();
        let h = solve_hetero(&c, 10).unwrap();
        assert_eq!(h.cost(4, 10, 0), 7.0);
        assert_eq!(h.cost(4, 1, 0), 10.0);
        assert_eq!(h.cost(4, 4, 0), 7.0);
        assert_eq!(h.cost(4, 2, 0), 8.0);
        assert_eq!(h.cost(3, -1, 0), f64::INFINITY);
        assert_eq!(h.cost(0, 3, 0), 0.0);
        assert_eq!(h.cost(3, 3, 2), 0.0);
    }

    #[test]
    fn extra_memory_never_costs_more() {
        let c = ChainSpec::new(vec![
            Layer { u: 0.5, s: 1, p: 1 },
            Layer { u: 0.5, s: 1, p: 2 },
            Layer { u: 0.5, s: 1, p: 1 },
        ])
        .unwrap();
        let h = solve_hetero(&c, 5).unwrap();
        assert_eq!(h.cost(3, 1, 0), f64::INFINITY);
        assert_eq!(h.cost(3, 2, 0), 3.0);
        for m in 1..5 {
            assert!(h.cost(3, m + 1, 0) <= h.cost(3, m, 0));
        }
    }

    #[test]
    fn replay_reproduces_table() {
        let c = ChainSpec::new(
            (0..30)
                .map(|i| Layer {
                    u: 1.0 + (i % 4) as f64 * 0.5,
                    s: 1 + i % 3,
                    p: 1 + i % 2,
                })
                .collect(),
        )
        .unwrap();
        let h = solve_hetero(&c, 12).unwrap();
        for m in 0..=12 {
            assert_eq!(h.replay(30, m, 0), h.cost(30, m as i64, 0), "m={m}");
        }
    }

    #[test]
    fn wide_layers_force_recompute_or_infinity() {
        let c = ChainSpec::new(vec![
            Layer { u: 1.0, s: 1, p: 1 },
            Layer { u: 1.0, s: 1, p: 5 },
            Layer { u: 1.0, s: 1, p: 1 },
        ])
        .unwrap();
        let h = solve_hetero(&c, 6).unwrap();
        assert_eq!(h.cost(3, 4, 0), f64::INFINITY);
        assert!(h.cost(3, 5, 0).is_finite());
        assert_eq!(h.cost(1, 1, 2), 1.0);
    }

    #[test]
    fn infeasible_and_capped() {
        let c = ChainSpec::uniform(3, 1.0, 1, 7).unwrap();
        assert!(matches!(
            solve_hetero(&c, 6),
            Err(Error::Infeasible {
                m_max: 6,
                min_budget: 7
            })
        ));
        let c = ChainSpec::uniform(20, 1.0, 1, 1).unwrap();
        assert!(matches!(solve_hetero_with(&c, 2, 10), Err(Error::Limit(_))));
    }

    #[test]
    fn csv_round() {
        let c = ChainSpec::from_reader("u,s,p\n1.5,2,3\n2, 1, 1\n".as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(*c.layer(1), Layer { u: 1.5, s: 2, p: 3 });
        let err = ChainSpec::from_reader("u,s,p\n1,x,1\n".as_bytes()).unwrap_err();
        assert!(
            matches!(err, Error::Parse { ref field, .. } if field == "layer 1"),
            "{err}"
        );
        assert!(ChainSpec::from_reader("u,s,p\n0,1,1\n".as_bytes()).is_err());
    }
}
