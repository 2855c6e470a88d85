//! Reference strategies, an exhaustive search oracle, and bound checks.
//!
//! Memory figures follow the executor's accounting: the entry state of the
//! sequence counts as one unit while it is still needed.

mod bounds;
mod oracle;

pub use bounds::{check_bounds, BoundViolation};
pub use oracle::{
    state_space_oracle, state_space_oracle_with, StackDiscipline, ORACLE_MAX_BUDGET, ORACLE_MAX_T,
};

use crate::policy::{naive_cost, CostModel};

#[derive(Clone, Debug, PartialEq)]
pub struct StrategyReport {
    pub name: String,
    pub t: usize,
    pub total_forwards: u64,
    pub memory_units: f64,
    pub forwards_per_step: f64,
}

impl StrategyReport {
    fn new(name: impl Into<String>, t: usize, total_forwards: u64, memory_units: f64) -> Self {
        StrategyReport {
            name: name.into(),
            t,
            total_forwards,
            memory_units,
            forwards_per_step: if t == 0 {
                0.0
            } else {
                total_forwards as f64 / t as f64
            },
        }
    }
}

/// Recompute every step from the initial state.
pub fn naive_quadratic(t: usize) -> StrategyReport {
    StrategyReport::new("NAIVE", t, naive_cost(t), 1.0)
}

/// Keep every hidden state.
pub fn store_all_hidden(t: usize) -> StrategyReport {
    let forwards = if t == 0 { 0 } else { 2 * t as u64 - 1 };
    StrategyReport::new("STORE_ALL", t, forwards, t as f64)
}

/// Segment layout used by [`chen_sqrt`]: `(segment_len, segments, last_len)`.
pub fn chen_segments(t: usize) -> (usize, usize, usize) {
    if t == 0 {
        return (0, 0, 0);
    }
    let len = ceil_sqrt(t);
    let segments = t.div_ceil(len);
    (len, segments, t - (segments - 1) * len)
}

fn ceil_sqrt(t: usize) -> usize {
    let mut r = (t as f64).sqrt() as usize;
    while r * r < t {
        r += 1;
    }
    while r > 1 && (r - 1) * (r - 1) >= t {
        r -= 1;
    }
    r
}

/// Chen's sqrt(t) scheme: one pass storing segment boundaries, then each
/// segment is re-run storing its internal states. The last segment's
/// internals are kept during the first pass.
///
/// Memory is `segments + len * beta`: the boundaries including the initial
/// state, plus one segment of deduplicated internal states.
pub fn chen_sqrt(t: usize, model: &CostModel) -> StrategyReport {
    let (len, segments, last) = chen_segments(t);
    let forwards = (2 * t - last) as u64;
    let memory = (segments + len * model.beta as usize) as f64;
    StrategyReport::new("CHEN_SQRT", t, forwards, memory)
}

/// Budget in hidden units that [`chen_sqrt`] occupies.
pub fn chen_budget(t: usize, model: &CostModel) -> usize {
    let (len, segments, _) = chen_segments(t);
    segments + len * model.beta as usize
}

/// Chen's recursive scheme: store `k` boundaries splitting the sequence into
/// `k + 1` near-equal parts and recurse into each, last part first. Parts
/// no longer than `k` store every hidden state.
pub fn chen_recursive(t: usize, k: usize) -> StrategyReport {
    assert!(k >= 1, "chen_recursive needs k >= 1");
    let mut memo = vec![None; t + 1];
    let (forwards, peak) = recursive_schedule(t, k, &mut memo);
    StrategyReport::new(format!("CHEN_RECURSIVE_{k}"), t, forwards, peak as f64)
}

/// Forwards and peak units (entry state included) for a segment of `len`.
fn recursive_schedule(len: usize, k: usize, memo: &mut [Option<(u64, usize)>]) -> (u64, usize) {
    if len == 0 {
        return (0, 0);
    }
    if let Some(v) = memo[len] {
        return v;
    }
    let v = if len <= k {
        (2 * len as u64 - 1, len)
    } else {
        let parts = split_even(len, k + 1);
        let last = *parts.last().unwrap();
        let mut forwards = (len - last) as u64;
        let mut peak = 0;
        for (j, &p) in parts.iter().enumerate() {
            let (f, m) = recursive_schedule(p, k, memo);
            forwards += f;
            peak = peak.max(j + m);
        }
        (forwards, peak)
    };
    memo[len] = Some(v);
    v
}

/// `n` near-equal parts of `len`, larger parts first.
fn split_even(len: usize, n: usize) -> Vec<usize> {
    let base = len / n;
    let extra = len % n;
    (0..n)
        .map(|i| base + usize::from(i < extra))
        .filter(|&p| p > 0)
        .collect()
}
