//! Policy execution with a bounded LIFO checkpoint stack.
//!
//! Positions are 1-based: step `p` reads input `p` and hidden state `p - 1`
//! and produces hidden state `p`. The initial hidden state is position 0.
//! A segment `(s, t)` covers steps `s + 1 ..= s + t` and starts from the
//! hidden state at `s`, which is always either the initial state or the
//! newest entry on the stack.
//!
//! Memory is accounted in the policy's units. Hidden entries cost 1, internal
//! entries cost 1 slot under ISM and `alpha` (or `beta` when deduplicated)
//! under MSM. While steps to the right of the newest checkpoint are still
//! waiting for their backward pass, the segment entry state is charged one
//! more unit; under HSM that unit is the initial state itself. The single
//! working core is never charged.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::policy::{Algorithm, CostModel, Decision, MemoryBudget, PolicyTable};

/// Host-side chain computation driven by the executor.
///
/// `forward` must be deterministic: recomputation relies on regenerating
/// bit-identical states.
pub trait ChainTape {
    type Input;
    type Hidden: Clone;
    /// Everything a backward step needs besides its input and input hidden
    /// state; includes the output hidden state.
    type Internal;
    type Output;
    type Grad;

    fn initial_hidden(&self) -> Self::Hidden;

    fn get_input(&self, pos: usize) -> Self::Input;

    fn forward(&self, input: &Self::Input, hidden: &Self::Hidden) -> Self::Internal;

    fn next_hidden(&self, internal: &Self::Internal) -> Self::Hidden;

    fn output(&self, internal: &Self::Internal) -> Self::Output;

    /// Gradient flowing into the last hidden state from beyond the sequence.
    fn terminal_grad_hidden(&self) -> Self::Grad;

    fn set_output_and_get_grad_output(&mut self, pos: usize, output: Self::Output) -> Self::Grad;

    /// Returns `(grad_input, grad_prev_hidden)`.
    fn backward(
        &mut self,
        input: &Self::Input,
        hidden: &Self::Hidden,
        internal: &Self::Internal,
        grad_output: Self::Grad,
        grad_hidden: Self::Grad,
    ) -> (Self::Grad, Self::Grad);

    fn set_grad_input(&mut self, pos: usize, grad_input: Self::Grad);

    /// Digest of a hidden state for nondeterminism detection.
    fn fingerprint(&self, _hidden: &Self::Hidden) -> Option<u64> {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Event {
    Forward(usize),
    Backward(usize),
    PushHidden(usize),
    /// Position and whether the input hidden state was omitted.
    PushInternal(usize, bool),
    Pop(usize),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExecutionTrace {
    pub forward_ops: u64,
    pub backward_ops: u64,
    pub peak_memory_units: usize,
    pub events: Vec<Event>,
}

impl ExecutionTrace {
    /// Forwards plus backwards weighted by `backward_ratio`.
    pub fn simulated_time(&self, backward_ratio: f64) -> f64 {
        self.forward_ops as f64 + backward_ratio * self.backward_ops as f64
    }

    /// Every pop matches the newest unmatched push.
    pub fn is_properly_nested(&self) -> bool {
        let mut open = Vec::new();
        for e in &self.events {
            match *e {
                Event::PushHidden(p) | Event::PushInternal(p, _) => open.push(p),
                Event::Pop(p) if open.pop() != Some(p) => return false,
                _ => {}
            }
        }
        open.is_empty()
    }
}

#[derive(Clone, Debug)]
pub enum Entry<H, I> {
    Hidden {
        pos: usize,
        state: H,
    },
    Internal {
        pos: usize,
        state: I,
        /// `None` when the input hidden state is the segment entry below.
        input_hidden: Option<H>,
    },
}

impl<H, I> Entry<H, I> {
    pub fn pos(&self) -> usize {
        match self {
            Entry::Hidden { pos, .. } | Entry::Internal { pos, .. } => *pos,
        }
    }
}

/// LIFO checkpoint store with a unit capacity.
#[derive(Debug)]
pub struct CheckpointStack<H, I> {
    entries: Vec<(Entry<H, I>, usize)>,
    capacity: MemoryBudget,
    charged: usize,
}

impl<H, I> CheckpointStack<H, I> {
    pub fn new(capacity: MemoryBudget) -> Self {
        CheckpointStack {
            entries: Vec::new(),
            capacity,
            charged: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top_pos(&self) -> usize {
        self.entries.last().map_or(0, |(e, _)| e.pos())
    }

    pub fn get(&self, index: usize) -> &Entry<H, I> {
        &self.entries[index].0
    }

    /// Units in use while backpropagation has reached `frontier`.
    pub fn occupancy(&self, frontier: usize) -> usize {
        self.charged + usize::from(frontier > self.top_pos())
    }

    pub fn push(&mut self, entry: Entry<H, I>, charge: usize, frontier: usize) -> Result<()> {
        let pos = entry.pos();
        if pos <= self.top_pos() && !self.entries.is_empty() {
            return Err(Error::config(format!(
                "checkpoint at {pos} does not lie above the stack top {}",
                self.top_pos()
            )));
        }
        let needed = self.charged + charge + usize::from(frontier > pos);
        if needed > self.capacity.units() {
            return Err(Error::Capacity {
                needed,
                capacity: self.capacity.units(),
            });
        }
        self.entries.push((entry, charge));
        self.charged += charge;
        Ok(())
    }

    pub fn pop(&mut self) -> Option<Entry<H, I>> {
        let (entry, charge) = self.entries.pop()?;
        self.charged -= charge;
        Some(entry)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExecutionOptions {
    /// Fingerprint every hidden state and fail if a recomputation differs.
    pub checksum: bool,
    pub record_events: bool,
}

#[derive(Clone, Debug)]
pub struct Execution<G> {
    pub grad_initial_hidden: G,
    pub trace: ExecutionTrace,
}

/// The operations the schedule walker needs from a chain.
trait Core {
    type Hidden: Clone;
    type Internal;
    type Grad;

    fn forward(&mut self, pos: usize, hidden: &Self::Hidden) -> Result<Self::Internal>;
    fn next_hidden(&self, internal: &Self::Internal) -> Self::Hidden;
    fn backward(
        &mut self,
        pos: usize,
        hidden: &Self::Hidden,
        internal: &Self::Internal,
        grad: Self::Grad,
    ) -> Self::Grad;
}

struct TapeCore<'a, T: ChainTape> {
    tape: &'a mut T,
    checksums: Option<HashMap<usize, u64>>,
}

impl<T: ChainTape> Core for TapeCore<'_, T> {
    type Hidden = T::Hidden;
    type Internal = T::Internal;
    type Grad = T::Grad;

    fn forward(&mut self, pos: usize, hidden: &T::Hidden) -> Result<T::Internal> {
        let input = self.tape.get_input(pos);
        let internal = self.tape.forward(&input, hidden);
        if let Some(sums) = self.checksums.as_mut() {
            if let Some(fp) = self.tape.fingerprint(&self.tape.next_hidden(&internal)) {
                if *sums.entry(pos).or_insert(fp) != fp {
                    return Err(Error::Integrity { pos });
                }
            }
        }
        Ok(internal)
    }

    fn next_hidden(&self, internal: &T::Internal) -> T::Hidden {
        self.tape.next_hidden(internal)
    }

    fn backward(
        &mut self,
        pos: usize,
        hidden: &T::Hidden,
        internal: &T::Internal,
        grad: T::Grad,
    ) -> T::Grad {
        let input = self.tape.get_input(pos);
        let output = self.tape.output(internal);
        let grad_output = self.tape.set_output_and_get_grad_output(pos, output);
        let (grad_input, grad_prev) =
            self.tape
                .backward(&input, hidden, internal, grad_output, grad);
        self.tape.set_grad_input(pos, grad_input);
        grad_prev
    }
}

/// Stateless stand-in used for dry runs.
struct DryCore;

impl Core for DryCore {
    type Hidden = ();
    type Internal = ();
    type Grad = ();

    fn forward(&mut self, _pos: usize, _hidden: &()) -> Result<()> {
        Ok(())
    }

    fn next_hidden(&self, _internal: &()) {}

    fn backward(&mut self, _pos: usize, _hidden: &(), _internal: &(), _grad: ()) {}
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Initial,
    Stack(usize),
}

struct Walker<'p, C: Core> {
    policy: &'p PolicyTable,
    core: C,
    initial: C::Hidden,
    stack: CheckpointStack<C::Hidden, C::Internal>,
    frontier: usize,
    trace: ExecutionTrace,
    record: bool,
}

impl<C: Core> Walker<'_, C> {
    fn note(&mut self, event: Event) {
        if self.record {
            self.trace.events.push(event);
        }
    }

    fn touch_peak(&mut self) {
        let occ = self.stack.occupancy(self.frontier);
        self.trace.peak_memory_units = self.trace.peak_memory_units.max(occ);
    }

    fn load(&self, slot: Slot) -> C::Hidden {
        match slot {
            Slot::Initial => self.initial.clone(),
            Slot::Stack(i) => match self.stack.get(i) {
                Entry::Hidden { state, .. } => state.clone(),
                Entry::Internal { state, .. } => self.core.next_hidden(state),
            },
        }
    }

    fn forward(&mut self, pos: usize, hidden: &C::Hidden) -> Result<C::Internal> {
        self.trace.forward_ops += 1;
        self.note(Event::Forward(pos));
        self.core.forward(pos, hidden)
    }

    /// Forward `steps` steps from the segment entry at `s`; returns the hidden
    /// state at `s + steps - 1` and the internal state of step `s + steps`.
    fn advance(&mut self, slot: Slot, s: usize, steps: usize) -> Result<(C::Hidden, C::Internal)> {
        let mut hidden = self.load(slot);
        for i in 1..steps {
            let internal = self.forward(s + i, &hidden)?;
            hidden = self.core.next_hidden(&internal);
        }
        let internal = self.forward(s + steps, &hidden)?;
        Ok((hidden, internal))
    }

    fn backward(
        &mut self,
        pos: usize,
        hidden: &C::Hidden,
        internal: &C::Internal,
        grad: C::Grad,
    ) -> C::Grad {
        debug_assert_eq!(
            pos, self.frontier,
            "backward steps must run in decreasing order"
        );
        self.trace.backward_ops += 1;
        self.note(Event::Backward(pos));
        let grad = self.core.backward(pos, hidden, internal, grad);
        self.frontier = pos - 1;
        grad
    }

    fn push(&mut self, entry: Entry<C::Hidden, C::Internal>, charge: usize) -> Result<Slot> {
        let event = match &entry {
            Entry::Hidden { pos, .. } => Event::PushHidden(*pos),
            Entry::Internal {
                pos, input_hidden, ..
            } => Event::PushInternal(*pos, input_hidden.is_none()),
        };
        self.stack.push(entry, charge, self.frontier)?;
        self.note(event);
        self.touch_peak();
        Ok(Slot::Stack(self.stack.len() - 1))
    }

    fn pop(&mut self) -> Entry<C::Hidden, C::Internal> {
        let entry = self.stack.pop().expect("pop on empty checkpoint stack");
        self.note(Event::Pop(entry.pos()));
        entry
    }

    /// Units and dedup flag of an internal push at relative position `y`.
    fn internal_charge(&self, y: usize) -> (usize, bool) {
        match self.policy.algorithm() {
            Algorithm::Ism => (1, false),
            Algorithm::Msm => (self.model().alpha as usize, false),
            Algorithm::MsmDedup if y == 1 => (self.model().beta as usize, true),
            Algorithm::MsmDedup => (self.model().alpha as usize, false),
            Algorithm::Hsm => unreachable!("hidden-state policies never push internal states"),
        }
    }

    fn model(&self) -> &CostModel {
        self.policy
            .cost_model()
            .expect("mixed policy carries its cost model")
    }

    fn run(&mut self, s: usize, t: usize, m: usize, entry: Slot, grad: C::Grad) -> Result<C::Grad> {
        match self.policy.decision(t, m)? {
            Decision::Empty => Ok(grad),
            Decision::Recompute => {
                let mut grad = grad;
                for k in (1..=t).rev() {
                    let (hidden, internal) = self.advance(entry, s, k)?;
                    grad = self.backward(s + k, &hidden, &internal, grad);
                }
                Ok(grad)
            }
            Decision::Hidden(y) => {
                let (_, internal) = self.advance(entry, s, y)?;
                let state = self.core.next_hidden(&internal);
                let slot = self.push(Entry::Hidden { pos: s + y, state }, 1)?;
                let rest = m
                    .checked_sub(1)
                    .ok_or_else(|| Error::config("hidden push without memory"))?;
                let grad = self.run(s + y, t - y, rest, slot, grad)?;
                self.pop();
                self.touch_peak();
                self.run(s, y, m, entry, grad)
            }
            Decision::Internal(y) => {
                let (hidden, internal) = self.advance(entry, s, y)?;
                let (charge, dedup) = self.internal_charge(y);
                let input_hidden = (!dedup).then_some(hidden);
                let slot = self.push(
                    Entry::Internal {
                        pos: s + y,
                        state: internal,
                        input_hidden,
                    },
                    charge,
                )?;
                let rest = m
                    .checked_sub(charge)
                    .ok_or_else(|| Error::config("internal push exceeds the segment budget"))?;
                let grad = self.run(s + y, t - y, rest, slot, grad)?;
                let Entry::Internal {
                    state,
                    input_hidden,
                    ..
                } = self.pop()
                else {
                    unreachable!("stack top changed under an internal checkpoint")
                };
                let hidden = match input_hidden {
                    Some(h) => h,
                    None => self.load(entry),
                };
                let grad = self.backward(s + y, &hidden, &state, grad);
                self.touch_peak();
                self.run(s, y - 1, m, entry, grad)
            }
        }
    }
}

/// Budget row to read: the budget itself, or `m_max` when the table is
/// already saturated there.
fn schedule_budget(policy: &PolicyTable, t: usize, budget: MemoryBudget) -> Result<usize> {
    let m = budget.units();
    let alpha = policy.cost_model().map_or(1, |c| c.alpha);
    if t > policy.t_max() {
        return Err(Error::OutOfRange {
            t,
            m,
            t_max: policy.t_max(),
            m_max: policy.m_max(),
        });
    }
    if m <= policy.m_max() {
        Ok(m)
    } else if policy.m_max() >= policy.algorithm().saturation(t, alpha) {
        Ok(policy.m_max())
    } else {
        Err(Error::OutOfRange {
            t,
            m,
            t_max: policy.t_max(),
            m_max: policy.m_max(),
        })
    }
}

fn walk<C: Core>(
    policy: &PolicyTable,
    core: C,
    initial: C::Hidden,
    t: usize,
    budget: MemoryBudget,
    record: bool,
    grad: C::Grad,
) -> Result<(C::Grad, ExecutionTrace)> {
    let m = schedule_budget(policy, t, budget)?;
    let mut walker = Walker {
        policy,
        core,
        initial,
        stack: CheckpointStack::new(budget),
        frontier: t,
        trace: ExecutionTrace::default(),
        record,
    };
    walker.touch_peak();
    let grad = walker.run(0, t, m, Slot::Initial, grad)?;
    debug_assert!(walker.stack.is_empty());
    Ok((grad, walker.trace))
}

/// Runs `policy` over the first `t` steps of `tape`.
pub fn execute<T: ChainTape>(
    policy: &PolicyTable,
    tape: &mut T,
    t: usize,
    budget: MemoryBudget,
    options: ExecutionOptions,
) -> Result<Execution<T::Grad>> {
    let initial = tape.initial_hidden();
    let grad = tape.terminal_grad_hidden();
    let core = TapeCore {
        tape,
        checksums: options.checksum.then(HashMap::new),
    };
    let (grad_initial_hidden, trace) = walk(
        policy,
        core,
        initial,
        t,
        budget,
        options.record_events,
        grad,
    )?;
    Ok(Execution {
        grad_initial_hidden,
        trace,
    })
}

fn expect_algorithm(policy: &PolicyTable, allowed: &[Algorithm]) -> Result<()> {
    if allowed.contains(&policy.algorithm()) {
        Ok(())
    } else {
        Err(Error::config(format!(
            "expected a {} policy, got {}",
            allowed
                .iter()
                .map(|a| a.name())
                .collect::<Vec<_>>()
                .join("/"),
            policy.algorithm()
        )))
    }
}

pub fn execute_hsm<T: ChainTape>(
    policy: &PolicyTable,
    tape: &mut T,
    t: usize,
    budget: MemoryBudget,
) -> Result<T::Grad> {
    expect_algorithm(policy, &[Algorithm::Hsm])?;
    Ok(execute(policy, tape, t, budget, ExecutionOptions::default())?.grad_initial_hidden)
}

pub fn execute_ism<T: ChainTape>(
    policy: &PolicyTable,
    tape: &mut T,
    t: usize,
    budget: MemoryBudget,
) -> Result<T::Grad> {
    expect_algorithm(policy, &[Algorithm::Ism])?;
    Ok(execute(policy, tape, t, budget, ExecutionOptions::default())?.grad_initial_hidden)
}

pub fn execute_msm<T: ChainTape>(
    policy: &PolicyTable,
    tape: &mut T,
    t: usize,
    budget: MemoryBudget,
    model: &CostModel,
) -> Result<T::Grad> {
    expect_algorithm(policy, &[Algorithm::Msm, Algorithm::MsmDedup])?;
    let own = policy
        .cost_model()
        .expect("mixed policy carries its cost model");
    if !own.same_memory(model) {
        return Err(Error::config(format!(
            "policy was built for alpha={}, beta={} but the model has alpha={}, beta={}",
            own.alpha, own.beta, model.alpha, model.beta
        )));
    }
    Ok(execute(policy, tape, t, budget, ExecutionOptions::default())?.grad_initial_hidden)
}

/// Dry run of the schedule: same control path as [`execute`], no tape.
pub fn trace_execution(
    policy: &PolicyTable,
    t: usize,
    budget: MemoryBudget,
) -> Result<ExecutionTrace> {
    walk(policy, DryCore, (), t, budget, true, ()).map(|(_, trace)| trace)
}

/// Dry run that only counts; for large sweeps.
pub fn count_execution(
    policy: &PolicyTable,
    t: usize,
    budget: MemoryBudget,
) -> Result<ExecutionTrace> {
    walk(policy, DryCore, (), t, budget, false, ()).map(|(_, trace)| trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{solve_hsm, solve_ism, solve_msm};

    fn budget(m: usize) -> MemoryBudget {
        MemoryBudget::new(m).unwrap()
    }

    #[test]
    fn hsm_traces_match_examples() {
        let p = solve_hsm(10, 4).unwrap();
        let tr = trace_execution(&p, 4, budget(4)).unwrap();
        assert_eq!(tr.forward_ops, 7);
        assert_eq!(tr.backward_ops, 4);
        assert!(tr.peak_memory_units <= 4);

        let p1 = solve_hsm(10, 1).unwrap();
        let tr = trace_execution(&p1, 10, budget(1)).unwrap();
        assert_eq!(tr.forward_ops, 55);
        assert_eq!(tr.peak_memory_units, 1);

        let tr = trace_execution(&p, 10, budget(4)).unwrap();
        assert_eq!(tr.forward_ops, p.cost(10, 4).get());
        assert!(tr.forward_ops <= 30);
    }

    #[test]
    fn empty_and_single_step() {
        let p = solve_hsm(3, 3).unwrap();
        let tr = trace_execution(&p, 0, budget(2)).unwrap();
        assert_eq!(
            (tr.forward_ops, tr.backward_ops, tr.peak_memory_units),
            (0, 0, 0)
        );
        let tr = trace_execution(&p, 1, budget(2)).unwrap();
        assert_eq!(tr.events, vec![Event::Forward(1), Event::Backward(1)]);
    }

    #[test]
    fn backward_order_and_nesting() {
        let p = solve_msm(40, budget(12), CostModel::new(3, 2).unwrap(), true).unwrap();
        let tr = trace_execution(&p, 40, budget(12)).unwrap();
        assert!(tr.is_properly_nested());
        let backs: Vec<usize> = tr
            .events
            .iter()
            .filter_map(|e| match e {
                Event::Backward(p) => Some(*p),
                _ => None,
            })
            .collect();
        assert_eq!(backs, (1..=40).rev().collect::<Vec<_>>());
    }

    #[test]
    fn ism_plentiful_is_plain_bptt() {
        let p = solve_ism(6, 6).unwrap();
        let tr = trace_execution(&p, 6, budget(6)).unwrap();
        assert_eq!(tr.forward_ops, 6);
        let forwards: Vec<usize> = tr
            .events
            .iter()
            .filter_map(|e| match e {
                Event::Forward(p) => Some(*p),
                _ => None,
            })
            .collect();
        assert_eq!(forwards, (1..=6).collect::<Vec<_>>());
        assert_eq!(tr.peak_memory_units, 6);
    }

    #[test]
    fn dedup_charges_beta_for_consecutive_internals() {
        let model = CostModel::new(3, 2).unwrap();
        let p = solve_msm(10, budget(20), model, true).unwrap();
        let tr = trace_execution(&p, 10, budget(20)).unwrap();
        let pushes: Vec<(usize, bool)> = tr
            .events
            .iter()
            .filter_map(|e| match e {
                Event::PushInternal(p, d) => Some((*p, *d)),
                _ => None,
            })
            .collect();
        let consecutive = pushes.windows(2).any(|w| w[1].0 == w[0].0 + 1 && w[1].1);
        assert!(consecutive, "{pushes:?}");
    }

    #[test]
    fn out_of_range_budget_is_rejected() {
        let p = solve_hsm(10, 3).unwrap();
        assert!(matches!(
            trace_execution(&p, 10, budget(5)),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            trace_execution(&p, 11, budget(2)),
            Err(Error::OutOfRange { .. })
        ));
        // Saturated tables serve larger budgets.
        let p = solve_hsm(4, 4).unwrap();
        assert_eq!(trace_execution(&p, 4, budget(9)).unwrap().forward_ops, 7);
    }

    #[test]
    fn stack_rejects_overflow_and_disorder() {
        let mut stack: CheckpointStack<u8, u8> = CheckpointStack::new(budget(3));
        stack
            .push(Entry::Hidden { pos: 2, state: 0 }, 1, 5)
            .unwrap();
        assert_eq!(stack.occupancy(5), 2);
        assert!(stack
            .push(Entry::Hidden { pos: 1, state: 0 }, 1, 5)
            .is_err());
        assert!(matches!(
            stack.push(
                Entry::Internal {
                    pos: 3,
                    state: 0,
                    input_hidden: None
                },
                2,
                5
            ),
            Err(Error::Capacity { needed: 4, .. })
        ));
        stack
            .push(
                Entry::Internal {
                    pos: 3,
                    state: 0,
                    input_hidden: None,
                },
                2,
                3,
            )
            .unwrap();
        assert_eq!(stack.occupancy(3), 3);
        assert_eq!(stack.pop().unwrap().pos(), 3);
        assert_eq!(stack.occupancy(2), 1);
    }
}
