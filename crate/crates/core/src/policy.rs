//! Shared domain types: cost model, memory budget, policy tables and the
//! policy document format.
//!
//! A policy document is a JSON object:
//!
//! ```text
//! { "version": 1, "algorithm": "HSM" | "ISM" | "MSM" | "MSM_DEDUP",
//!   "t_max": .., "m_max": .., "alpha": .. | null, "beta": .. | null,
//!   "backward_ratio": .. | null,
//!   "cost":  [[..], ..],            // (t_max + 1) rows of (m_max + 1) entries, -1 = infinite
//!   "split": [[..], ..],            // 0 = no push, recompute from the segment entry
//!   "split_hidden": .., "split_internal": .., "kind": .. }   // MSM only
//! ```
//!
//! Tables are indexed `table[t][m]`, so row 0 (empty sequence) and column 0
//! (no memory) are present and `cost[5][2]` is literally the cost of
//! `t = 5, m = 2`. `kind` encodes 0 = no push, 1 = hidden, 2 = internal.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Number of forward operations, or infinity for an infeasible cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cost(u64);

impl Cost {
    pub const ZERO: Cost = Cost(0);
    pub const INFINITE: Cost = Cost(u64::MAX);

    pub fn finite(value: u64) -> Cost {
        assert!(value != u64::MAX, "finite cost overflow");
        Cost(value)
    }

    pub fn is_finite(self) -> bool {
        self.0 != u64::MAX
    }

    pub fn value(self) -> Option<u64> {
        self.is_finite().then_some(self.0)
    }

    /// The finite value; panics on infinity.
    pub fn get(self) -> u64 {
        self.value().expect("infinite cost")
    }

    pub(crate) fn from_raw(raw: u64) -> Cost {
        Cost(raw)
    }

    fn to_doc(self) -> i64 {
        match self.value() {
            Some(v) => v as i64,
            None => -1,
        }
    }

    fn from_doc(v: i64) -> Option<Cost> {
        match v {
            -1 => Some(Cost::INFINITE),
            v if v >= 0 => Some(Cost(v as u64)),
            _ => None,
        }
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value() {
            Some(v) => write!(f, "{v}"),
            None => f.write_str("inf"),
        }
    }
}

/// Forward operations of the constant-memory strategy: `t (t + 1) / 2`.
pub fn naive_cost(t: usize) -> u64 {
    let t = t as u64;
    t * (t + 1) / 2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    /// Hidden states only; memory counted in hidden-state slots.
    #[serde(rename = "HSM")]
    Hsm,
    /// Internal states only; memory counted in internal-state slots.
    #[serde(rename = "ISM")]
    Ism,
    /// Mixed hidden and internal states; memory in hidden-state units.
    #[serde(rename = "MSM")]
    Msm,
    /// As `Msm`, but an internal state pushed right after its segment entry
    /// omits its input hidden state and is charged `beta`.
    #[serde(rename = "MSM_DEDUP")]
    MsmDedup,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Hsm => "HSM",
            Algorithm::Ism => "ISM",
            Algorithm::Msm => "MSM",
            Algorithm::MsmDedup => "MSM_DEDUP",
        }
    }

    pub fn is_mixed(self) -> bool {
        matches!(self, Algorithm::Msm | Algorithm::MsmDedup)
    }

    /// Smallest budget at which a sequence of length `t` reaches its
    /// plentiful-memory cost; every larger budget has the same cost.
    pub fn saturation(self, t: usize, alpha: u32) -> usize {
        let units = match self {
            Algorithm::Hsm | Algorithm::Ism => t,
            Algorithm::Msm | Algorithm::MsmDedup => alpha as usize * t,
        };
        units.max(1)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Memory sizes of the two checkpoint kinds, in hidden-state units, plus the
/// relative price of a backward step used by the time simulation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub alpha: u32,
    pub beta: u32,
    pub backward_ratio: f64,
}

impl CostModel {
    pub const DEFAULT_BACKWARD_RATIO: f64 = 2.0;

    pub fn new(alpha: u32, beta: u32) -> Result<Self> {
        Self::with_backward_ratio(alpha, beta, Self::DEFAULT_BACKWARD_RATIO)
    }

    pub fn with_backward_ratio(alpha: u32, beta: u32, backward_ratio: f64) -> Result<Self> {
        let model = CostModel {
            alpha,
            beta,
            backward_ratio,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 2 {
            return Err(Error::config(format!(
                "alpha must be >= 2, got {}",
                self.alpha
            )));
        }
        if self.beta < 1 || self.beta > self.alpha {
            return Err(Error::config(format!(
                "beta must satisfy 1 <= beta <= alpha, got beta={} alpha={}",
                self.beta, self.alpha
            )));
        }
        if !(self.backward_ratio.is_finite() && self.backward_ratio > 0.0) {
            return Err(Error::config(format!(
                "backward ratio must be positive, got {}",
                self.backward_ratio
            )));
        }
        Ok(())
    }

    /// Units charged for an internal-state checkpoint.
    pub fn internal_charge(&self, input_hidden_known: bool) -> usize {
        if input_hidden_known {
            self.beta as usize
        } else {
            self.alpha as usize
        }
    }

    /// Same sizes, compared without the timing parameter.
    pub fn same_memory(&self, other: &CostModel) -> bool {
        self.alpha == other.alpha && self.beta == other.beta
    }
}

/// Checkpoint memory capacity in the policy's units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MemoryBudget(usize);

impl MemoryBudget {
    pub fn new(units: usize) -> Result<Self> {
        if units == 0 {
            return Err(Error::config("memory budget must be at least 1 unit"));
        }
        Ok(MemoryBudget(units))
    }

    pub fn units(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PushKind {
    Hidden,
    Internal,
}

/// What a policy prescribes for a segment of length `t` with budget `m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    /// Nothing left to backpropagate.
    Empty,
    /// Push nothing; recompute each step from the segment entry.
    Recompute,
    /// Forward `y` steps and push the hidden state reached.
    Hidden(usize),
    /// Forward `y` steps and push the internal state of step `y`.
    Internal(usize),
}

/// Dense row-major `(t, m)` table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn new(rows: usize, cols: usize, fill: T) -> Self {
        Grid {
            rows,
            cols,
            data: vec![fill; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn to_nested<U>(&self, f: impl Fn(T) -> U) -> Vec<Vec<U>> {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|&v| f(v)).collect())
            .collect()
    }
}

/// Extra tables of the mixed strategies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixedTables {
    /// Best hidden-push position (0 where no hidden push is possible).
    pub split_hidden: Grid<u32>,
    /// Best internal-push position (0 where no internal push is possible).
    pub split_internal: Grid<u32>,
    /// Chosen checkpoint kind; `None` where the policy recomputes without pushing.
    pub kind: Grid<Option<PushKind>>,
}

/// Optimal costs and first-push positions for every `(t, m)` with
/// `t <= t_max`, `m <= m_max`. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTable {
    pub(crate) algorithm: Algorithm,
    pub(crate) t_max: usize,
    pub(crate) m_max: usize,
    pub(crate) cost_model: Option<CostModel>,
    pub(crate) cost: Grid<Cost>,
    pub(crate) split: Grid<u32>,
    pub(crate) mixed: Option<MixedTables>,
}

impl PolicyTable {
    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    pub fn cost_model(&self) -> Option<&CostModel> {
        self.cost_model.as_ref()
    }

    pub fn mixed_tables(&self) -> Option<&MixedTables> {
        self.mixed.as_ref()
    }

    pub fn covers(&self, t: usize, m: usize) -> bool {
        t <= self.t_max && m <= self.m_max
    }

    fn check_range(&self, t: usize, m: usize) -> Result<()> {
        if self.covers(t, m) {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                t,
                m,
                t_max: self.t_max,
                m_max: self.m_max,
            })
        }
    }

    /// Cost of `(t, m)`; panics outside the table.
    pub fn cost(&self, t: usize, m: usize) -> Cost {
        self.cost.get(t, m)
    }

    pub fn try_cost(&self, t: usize, m: usize) -> Result<Cost> {
        self.check_range(t, m)?;
        Ok(self.cost(t, m))
    }

    /// Like [`PolicyTable::try_cost`], but accepts budgets beyond `m_max` when
    /// the table already reaches the plentiful-memory regime for `t`.
    pub fn lookup(&self, t: usize, m: usize) -> Result<Cost> {
        let alpha = self.cost_model.map_or(1, |c| c.alpha);
        if m > self.m_max && t <= self.t_max && self.m_max >= self.algorithm.saturation(t, alpha) {
            return Ok(self.cost(t, self.m_max));
        }
        self.try_cost(t, m)
    }

    /// First-push position recorded for `(t, m)`, 0 when none.
    pub fn split(&self, t: usize, m: usize) -> usize {
        self.split.get(t, m) as usize
    }

    pub fn decision(&self, t: usize, m: usize) -> Result<Decision> {
        self.check_range(t, m)?;
        if t == 0 {
            return Ok(Decision::Empty);
        }
        if !self.cost(t, m).is_finite() {
            return Err(Error::config(format!(
                "policy has no feasible schedule for t={t}, m={m}"
            )));
        }
        let y = self.split(t, m);
        Ok(match self.algorithm {
            Algorithm::Hsm if y == 0 => Decision::Recompute,
            Algorithm::Hsm => Decision::Hidden(y),
            Algorithm::Ism => Decision::Internal(y),
            Algorithm::Msm | Algorithm::MsmDedup => {
                let mixed = self
                    .mixed
                    .as_ref()
                    .expect("mixed policy without mixed tables");
                match mixed.kind.get(t, m) {
                    None => Decision::Recompute,
                    Some(PushKind::Hidden) => Decision::Hidden(y),
                    Some(PushKind::Internal) => Decision::Internal(y),
                }
            }
        })
    }

    pub fn to_document(&self) -> PolicyDocument {
        let split = |g: &Grid<u32>| g.to_nested(|v| v as i64);
        PolicyDocument {
            version: FORMAT_VERSION,
            algorithm: self.algorithm,
            t_max: self.t_max,
            m_max: self.m_max,
            alpha: self.cost_model.map(|c| c.alpha),
            beta: self.cost_model.map(|c| c.beta),
            backward_ratio: self.cost_model.map(|c| c.backward_ratio),
            cost: self.cost.to_nested(Cost::to_doc),
            split: split(&self.split),
            split_hidden: self.mixed.as_ref().map(|x| split(&x.split_hidden)),
            split_internal: self.mixed.as_ref().map(|x| split(&x.split_internal)),
            kind: self.mixed.as_ref().map(|x| {
                x.kind.to_nested(|k| match k {
                    None => 0,
                    Some(PushKind::Hidden) => 1,
                    Some(PushKind::Internal) => 2,
                })
            }),
        }
    }

    pub fn from_document(doc: PolicyDocument) -> Result<Self> {
        if doc.version != FORMAT_VERSION {
            return Err(parse_err(
                "version",
                format!(
                    "unsupported format version {} (expected {FORMAT_VERSION})",
                    doc.version
                ),
            ));
        }
        if doc.t_max == 0 || doc.m_max == 0 {
            return Err(Error::validation("t_max and m_max must be at least 1"));
        }
        let (rows, cols) = (doc.t_max + 1, doc.m_max + 1);

        let cost_model = match (doc.alpha, doc.beta) {
            (Some(alpha), Some(beta)) => {
                let ratio = doc
                    .backward_ratio
                    .unwrap_or(CostModel::DEFAULT_BACKWARD_RATIO);
                Some(
                    CostModel::with_backward_ratio(alpha, beta, ratio)
                        .map_err(|e| Error::validation(e.to_string()))?,
                )
            }
            (None, None) => None,
            _ => return Err(Error::validation("alpha and beta must be given together")),
        };
        if doc.algorithm.is_mixed() && cost_model.is_none() {
            return Err(Error::validation("mixed policies require alpha and beta"));
        }

        let cost = grid_from("cost", &doc.cost, rows, cols, Cost::from_doc)?;
        let split = grid_from("split", &doc.split, rows, cols, split_from_doc)?;
        let mixed = if doc.algorithm.is_mixed() {
            let need = |name: &str, v: Option<Vec<Vec<i64>>>| {
                v.ok_or_else(|| parse_err(name, "missing table for mixed policy"))
            };
            let split_hidden = need("split_hidden", doc.split_hidden)?;
            let split_internal = need("split_internal", doc.split_internal)?;
            let kind = need("kind", doc.kind)?;
            Some(MixedTables {
                split_hidden: grid_from("split_hidden", &split_hidden, rows, cols, split_from_doc)?,
                split_internal: grid_from(
                    "split_internal",
                    &split_internal,
                    rows,
                    cols,
                    split_from_doc,
                )?,
                kind: grid_from("kind", &kind, rows, cols, |v| match v {
                    0 => Some(None),
                    1 => Some(Some(PushKind::Hidden)),
                    2 => Some(Some(PushKind::Internal)),
                    _ => None,
                })?,
            })
        } else {
            None
        };

        let table = PolicyTable {
            algorithm: doc.algorithm,
            t_max: doc.t_max,
            m_max: doc.m_max,
            cost_model,
            cost,
            split,
            mixed,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_document()).expect("policy document serializes")
    }

    /// Serialized policy document.
    pub fn serialize(&self) -> Vec<u8> {
        self.to_json().into_bytes()
    }

    pub fn deserialize(data: &[u8]) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_slice(data);
        let doc: PolicyDocument = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let message = e.into_inner().to_string();
            let field = if path == "." {
                // Missing fields are reported against the enclosing object.
                message
                    .split('`')
                    .nth(1)
                    .map(str::to_owned)
                    .unwrap_or_else(|| "document".to_owned())
            } else {
                path
            };
            Error::Parse { field, message }
        })?;
        Self::from_document(doc)
    }

    /// Checks every structural invariant of the table.
    pub fn validate(&self) -> Result<()> {
        let (t_max, m_max) = (self.t_max, self.m_max);
        let bad = |msg: String| Err(Error::validation(msg));

        for m in 0..=m_max {
            if self.cost(0, m) != Cost::ZERO {
                return bad(format!("cost(0, {m}) must be 0"));
            }
        }
        for t in 1..=t_max {
            if self.cost(t, 0).is_finite() {
                return bad(format!("cost({t}, 0) must be infinite"));
            }
            for m in 1..=m_max {
                if !self.cost(t, m).is_finite() {
                    return bad(format!("cost({t}, {m}) must be finite"));
                }
            }
        }

        for t in 1..=t_max {
            for m in 1..=m_max {
                let c = self.cost(t, m);
                if m < m_max && self.cost(t, m + 1) > c {
                    return bad(format!(
                        "cost increases with memory: cost({t}, {}) = {} > cost({t}, {m}) = {c}",
                        m + 1,
                        self.cost(t, m + 1)
                    ));
                }
                if t < t_max && self.cost(t + 1, m) < c {
                    return bad(format!(
                        "cost decreases with length: cost({}, {m}) = {} < cost({t}, {m}) = {c}",
                        t + 1,
                        self.cost(t + 1, m)
                    ));
                }
            }
        }

        let alpha = self.cost_model.map_or(1, |c| c.alpha as usize);
        for t in 1..=t_max {
            let t64 = t as u64;
            if self.cost(t, 1).get() != naive_cost(t) {
                return bad(format!("cost({t}, 1) must be {}", naive_cost(t)));
            }
            for m in 1..=m_max {
                let c = self.cost(t, m).get();
                let expected = match self.algorithm {
                    Algorithm::Hsm if m >= t => Some(2 * t64 - 1),
                    Algorithm::Ism if m >= t => Some(t64),
                    Algorithm::Msm | Algorithm::MsmDedup if m >= alpha * t => Some(t64),
                    _ => None,
                };
                if let Some(e) = expected {
                    if c != e {
                        return bad(format!(
                            "plentiful-memory cost({t}, {m}) must be {e}, found {c}"
                        ));
                    }
                }
            }
        }

        for t in 0..=t_max {
            for m in 0..=m_max {
                self.validate_split(t, m)?;
            }
        }
        Ok(())
    }

    fn validate_split(&self, t: usize, m: usize) -> Result<()> {
        let y = self.split(t, m);
        let bad = |what: &str, y: usize| {
            Err(Error::validation(format!(
                "{what}({t}, {m}) = {y} is out of range"
            )))
        };
        if t == 0 || m == 0 {
            if y != 0 {
                return bad("split", y);
            }
            if let Some(x) = &self.mixed {
                if x.split_hidden.get(t, m) != 0
                    || x.split_internal.get(t, m) != 0
                    || x.kind.get(t, m).is_some()
                {
                    return bad("split", y);
                }
            }
            return Ok(());
        }
        let recompute_ok = self.cost(t, m).get() == naive_cost(t);
        match self.algorithm {
            Algorithm::Hsm => {
                if y == 0 {
                    if !(t == 1 || m == 1) || !recompute_ok {
                        return bad("split", y);
                    }
                } else if y >= t {
                    return bad("split", y);
                }
            }
            Algorithm::Ism => {
                if y == 0 || y > t {
                    return bad("split", y);
                }
            }
            Algorithm::Msm | Algorithm::MsmDedup => {
                let x = self.mixed.as_ref().expect("mixed tables");
                let (d1, d2) = (
                    x.split_hidden.get(t, m) as usize,
                    x.split_internal.get(t, m) as usize,
                );
                if d1 >= t.max(1) && d1 != 0 {
                    return bad("split_hidden", d1);
                }
                if d2 > t {
                    return bad("split_internal", d2);
                }
                match x.kind.get(t, m) {
                    None if y != 0 || !recompute_ok => return bad("split", y),
                    Some(PushKind::Hidden) if y != d1 || d1 == 0 => return bad("split", y),
                    Some(PushKind::Internal) if y != d2 || d2 == 0 => return bad("split", y),
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

/// On-disk shape of a policy.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDocument {
    pub version: u32,
    pub algorithm: Algorithm,
    pub t_max: usize,
    pub m_max: usize,
    pub alpha: Option<u32>,
    pub beta: Option<u32>,
    #[serde(default)]
    pub backward_ratio: Option<f64>,
    pub cost: Vec<Vec<i64>>,
    pub split: Vec<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_hidden: Option<Vec<Vec<i64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_internal: Option<Vec<Vec<i64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<Vec<Vec<i64>>>,
}

fn parse_err(field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        field: field.to_owned(),
        message: message.into(),
    }
}

fn split_from_doc(v: i64) -> Option<u32> {
    u32::try_from(v).ok()
}

fn grid_from<T: Copy>(
    name: &str,
    nested: &[Vec<i64>],
    rows: usize,
    cols: usize,
    conv: impl Fn(i64) -> Option<T>,
) -> Result<Grid<T>> {
    if nested.len() != rows {
        return Err(parse_err(
            name,
            format!("expected {rows} rows, found {}", nested.len()),
        ));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (r, row) in nested.iter().enumerate() {
        if row.len() != cols {
            return Err(parse_err(
                &format!("{name}[{r}]"),
                format!("expected {cols} entries, found {}", row.len()),
            ));
        }
        for (c, &v) in row.iter().enumerate() {
            let value = conv(v).ok_or_else(|| {
                parse_err(&format!("{name}[{r}][{c}]"), format!("invalid value {v}"))
            })?;
            data.push(value);
        }
    }
    Ok(Grid { rows, cols, data })
}
