//! Uniform-cost search over every checkpointing schedule of a short chain.
//!
//! The search knows nothing about the dynamic programs. A state is the
//! backpropagation frontier `f` (steps above `f` are done), the checkpoint
//! stack, and the single working register, which holds the hidden state at
//! some position and possibly the internal state of the step that produced
//! it. The register is tied to the stored state it was computed from and is
//! lost when that state is dropped. Only forward steps cost anything.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use crate::error::{Error, Result};
use crate::policy::{Algorithm, Cost, CostModel, MemoryBudget};

pub const ORACLE_MAX_T: usize = 12;
pub const ORACLE_MAX_BUDGET: usize = 6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StackDiscipline {
    #[default]
    Lifo,
    /// Any entry may be read or dropped, not only the top.
    Relaxed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Kind {
    Hidden,
    /// Internal state; `true` when stored without its input hidden state.
    Internal(bool),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Slot {
    pos: u8,
    kind: Kind,
    charge: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct State {
    frontier: u8,
    stack: Vec<Slot>,
    work: Option<Work>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Work {
    pos: u8,
    /// Holds the internal state of step `pos`.
    internal: bool,
    /// Position of the stored state it derives from; 0 is the initial state.
    anchor: u8,
}

struct Rules {
    budget: usize,
    class: Algorithm,
    alpha: u8,
    beta: u8,
    discipline: StackDiscipline,
}

impl Rules {
    fn hidden_allowed(&self) -> bool {
        self.class != Algorithm::Ism
    }

    fn internal_allowed(&self) -> bool {
        self.class != Algorithm::Hsm
    }

    /// Units and dedup flag for an internal state pushed at `pos`.
    fn internal_charge(&self, below: u8, pos: u8) -> (u8, bool) {
        match self.class {
            Algorithm::Ism => (1, false),
            Algorithm::MsmDedup if below + 1 == pos => (self.beta, true),
            _ => (self.alpha, false),
        }
    }
}

fn top_pos(stack: &[Slot]) -> u8 {
    stack.last().map_or(0, |s| s.pos)
}

fn occupancy(stack: &[Slot], frontier: u8) -> usize {
    let charged: usize = stack.iter().map(|s| s.charge as usize).sum();
    charged + usize::from(frontier > top_pos(stack))
}

fn useless(slot: &Slot, frontier: u8) -> bool {
    match slot.kind {
        Kind::Hidden => slot.pos >= frontier,
        Kind::Internal(_) => slot.pos > frontier,
    }
}

/// Whether the entry at `index` is the input hidden state of a deduplicated
/// internal state directly above it.
fn pinned(stack: &[Slot], index: usize) -> bool {
    stack
        .get(index + 1)
        .is_some_and(|s| s.kind == Kind::Internal(true))
}

fn normalize(mut s: State, rules: &Rules) -> State {
    let before = s.stack.len();
    match rules.discipline {
        StackDiscipline::Lifo => {
            while s.stack.last().is_some_and(|top| useless(top, s.frontier)) {
                s.stack.pop();
            }
        }
        StackDiscipline::Relaxed => {
            let f = s.frontier;
            s.stack.retain(|slot| !useless(slot, f));
        }
    }
    if s.stack.len() != before {
        detach(&mut s);
    }
    if s.work.is_some_and(|w| w.pos > s.frontier) {
        s.work = None;
    }
    s
}

/// Clears the register if its anchor is no longer stored.
fn detach(s: &mut State) {
    if let Some(w) = s.work {
        if w.anchor != 0 && !s.stack.iter().any(|e| e.pos == w.anchor) {
            s.work = None;
        }
    }
}

fn successors(s: &State, rules: &Rules, out: &mut Vec<(u64, State)>) {
    let f = s.frontier;
    let mut emit = |cost: u64, next: State| {
        let next = normalize(next, rules);
        if occupancy(&next.stack, next.frontier) <= rules.budget {
            out.push((cost, next));
        }
    };

    if let Some(w) = s.work {
        let (p, has_internal) = (w.pos, w.internal);
        if p < f {
            let work = Work {
                pos: p + 1,
                internal: true,
                ..w
            };
            emit(
                1,
                State {
                    work: Some(work),
                    ..s.clone()
                },
            );
        }
        let top = top_pos(&s.stack);
        if rules.hidden_allowed() && p >= 1 && p < f && (p > top || s.stack.is_empty()) {
            let mut next = s.clone();
            next.stack.push(Slot {
                pos: p,
                kind: Kind::Hidden,
                charge: 1,
            });
            next.work = Some(Work { anchor: p, ..w });
            emit(0, next);
        }
        if rules.internal_allowed() && has_internal && p <= f && (p > top || s.stack.is_empty()) {
            let (charge, dedup) = rules.internal_charge(top, p);
            let mut next = s.clone();
            next.stack.push(Slot {
                pos: p,
                kind: Kind::Internal(dedup),
                charge,
            });
            next.work = Some(Work { anchor: p, ..w });
            emit(0, next);
        }
        if has_internal && p == f {
            let next = State {
                frontier: f - 1,
                work: None,
                ..s.clone()
            };
            emit(0, next);
        }
    }

    // Backward through a stored internal state at the frontier.
    if let Some(i) = s
        .stack
        .iter()
        .position(|e| e.pos == f && matches!(e.kind, Kind::Internal(_)))
    {
        if i + 1 == s.stack.len() || rules.discipline == StackDiscipline::Relaxed {
            let mut next = s.clone();
            next.stack.remove(i);
            next.frontier = f - 1;
            detach(&mut next);
            emit(0, next);
        }
    }

    // Restart the register from a stored state.
    let mut restart = |pos: u8| {
        let work = Work {
            pos,
            internal: false,
            anchor: pos,
        };
        if s.work != Some(work) {
            emit(
                0,
                State {
                    work: Some(work),
                    ..s.clone()
                },
            );
        }
    };
    match rules.discipline {
        StackDiscipline::Lifo => restart(top_pos(&s.stack)),
        StackDiscipline::Relaxed => {
            restart(0);
            for e in &s.stack {
                restart(e.pos);
            }
        }
    }

    // Drop entries.
    match rules.discipline {
        StackDiscipline::Lifo => {
            if !s.stack.is_empty() {
                let mut next = s.clone();
                next.stack.pop();
                detach(&mut next);
                emit(0, next);
            }
        }
        StackDiscipline::Relaxed => {
            for i in 0..s.stack.len() {
                if !pinned(&s.stack, i) {
                    let mut next = s.clone();
                    next.stack.remove(i);
                    detach(&mut next);
                    emit(0, next);
                }
            }
        }
    }
}

/// Minimum total forward steps to backpropagate through `t` steps under the
/// LIFO stack discipline. `INFINITE` when no schedule fits.
pub fn state_space_oracle(
    t: usize,
    budget: MemoryBudget,
    model: &CostModel,
    class: Algorithm,
) -> Result<Cost> {
    state_space_oracle_with(t, budget, model, class, StackDiscipline::Lifo)
}

pub fn state_space_oracle_with(
    t: usize,
    budget: MemoryBudget,
    model: &CostModel,
    class: Algorithm,
    discipline: StackDiscipline,
) -> Result<Cost> {
    if t > ORACLE_MAX_T || budget.units() > ORACLE_MAX_BUDGET {
        return Err(Error::Limit(format!(
            "oracle search is limited to t <= {ORACLE_MAX_T} and budget <= {ORACLE_MAX_BUDGET}, got t={t}, budget={}",
            budget.units()
        )));
    }
    model.validate()?;
    let rules = Rules {
        budget: budget.units(),
        class,
        alpha: model.alpha as u8,
        beta: model.beta as u8,
        discipline,
    };
    let start = State {
        frontier: t as u8,
        stack: Vec::new(),
        work: Some(Work {
            pos: 0,
            internal: false,
            anchor: 0,
        }),
    };
    if occupancy(&start.stack, start.frontier) > rules.budget {
        return Ok(Cost::INFINITE);
    }

    let mut best: HashMap<State, u64> = HashMap::new();
    let mut queue = BinaryHeap::new();
    best.insert(start.clone(), 0);
    queue.push(Reverse((0u64, start)));
    let mut next = Vec::new();
    while let Some(Reverse((cost, state))) = queue.pop() {
        if state.frontier == 0 {
            return Ok(Cost::finite(cost));
        }
        if best.get(&state).is_some_and(|&c| c < cost) {
            continue;
        }
        next.clear();
        successors(&state, &rules, &mut next);
        for (step, succ) in next.drain(..) {
            let c = cost + step;
            if best.get(&succ).is_none_or(|&old| c < old) {
                best.insert(succ.clone(), c);
                queue.push(Reverse((c, succ)));
            }
        }
    }
    Ok(Cost::INFINITE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(t: usize, m: usize, class: Algorithm) -> u64 {
        let model = CostModel::new(2, 1).unwrap();
        state_space_oracle(t, MemoryBudget::new(m).unwrap(), &model, class)
            .unwrap()
            .get()
    }

    #[test]
    fn known_values() {
        assert_eq!(run(5, 2, Algorithm::Hsm), 11);
        assert_eq!(run(3, 2, Algorithm::Ism), 4);
        for class in [
            Algorithm::Hsm,
            Algorithm::Ism,
            Algorithm::Msm,
            Algorithm::MsmDedup,
        ] {
            assert_eq!(run(1, 1, class), 1);
            assert_eq!(run(0, 1, class), 0);
        }
        assert_eq!(run(4, 1, Algorithm::Hsm), 10);
        assert_eq!(run(4, 4, Algorithm::Hsm), 7);
        assert_eq!(run(4, 4, Algorithm::Ism), 4);
        assert_eq!(run(2, 2, Algorithm::Msm), 3);
        assert_eq!(run(2, 2, Algorithm::MsmDedup), 2);
    }

    #[test]
    fn refuses_large_instances() {
        let model = CostModel::new(2, 1).unwrap();
        let big = state_space_oracle(13, MemoryBudget::new(2).unwrap(), &model, Algorithm::Hsm);
        assert!(matches!(big, Err(Error::Limit(_))));
        let big = state_space_oracle(5, MemoryBudget::new(7).unwrap(), &model, Algorithm::Hsm);
        assert!(matches!(big, Err(Error::Limit(_))));
    }
}
