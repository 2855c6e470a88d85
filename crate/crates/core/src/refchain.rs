//! A small tanh recurrent cell used to check that executed schedules produce
//! the same gradients as plain backpropagation through time.
//!
//! `h_p = tanh(W h_{p-1} + U x_p + b)`, and the loss is the sum of squares
//! of every `h_p`. The internal state of a step is its pre-activation and
//! output, so it is twice the size of a hidden state; with its input hidden
//! state it is three times.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::executor::{execute, ChainTape, ExecutionOptions, ExecutionTrace};
use crate::policy::{CostModel, MemoryBudget, PolicyTable};

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceCell {
    pub hidden_dim: usize,
    pub input_dim: usize,
    /// `hidden_dim x hidden_dim`, row-major.
    pub w: Vec<f64>,
    /// `hidden_dim x input_dim`, row-major.
    pub u: Vec<f64>,
    pub b: Vec<f64>,
    pub h0: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct StepInternal {
    pub pre: Vec<f64>,
    pub out: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    /// Gradient with respect to `x_p`, at index `p - 1`.
    pub inputs: Vec<Vec<f64>>,
    pub initial_hidden: Vec<f64>,
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
}

impl Gradients {
    fn zeros(cell: &ReferenceCell, t: usize) -> Self {
        let (h, i) = (cell.hidden_dim, cell.input_dim);
        Gradients {
            loss: 0.0,
            inputs: vec![Vec::new(); t],
            initial_hidden: vec![0.0; h],
            w: vec![0.0; h * h],
            u: vec![0.0; h * i],
            b: vec![0.0; h],
        }
    }
}

impl ReferenceCell {
    pub const DEFAULT_HIDDEN: usize = 4;
    pub const DEFAULT_INPUT: usize = 3;

    pub fn seeded(seed: u64) -> Self {
        Self::new(Self::DEFAULT_HIDDEN, Self::DEFAULT_INPUT, seed)
    }

    pub fn new(hidden_dim: usize, input_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, scale: f64| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
        };
        let w = draw(hidden_dim * hidden_dim, 0.7);
        let u = draw(hidden_dim * input_dim, 0.7);
        let b = draw(hidden_dim, 0.2);
        let h0 = draw(hidden_dim, 0.5);
        ReferenceCell {
            hidden_dim,
            input_dim,
            w,
            u,
            b,
            h0,
        }
    }

    pub fn zeros(hidden_dim: usize, input_dim: usize) -> Self {
        ReferenceCell {
            hidden_dim,
            input_dim,
            w: vec![0.0; hidden_dim * hidden_dim],
            u: vec![0.0; hidden_dim * input_dim],
            b: vec![0.0; hidden_dim],
            h0: vec![0.0; hidden_dim],
        }
    }

    /// Checkpoint sizes in hidden-state units.
    pub fn measured_model(&self) -> CostModel {
        let beta = 2;
        CostModel::new(beta + 1, beta).expect("measured sizes are valid")
    }

    pub fn step(&self, x: &[f64], h: &[f64]) -> StepInternal {
        let (hd, id) = (self.hidden_dim, self.input_dim);
        let mut pre = self.b.clone();
        for (r, p) in pre.iter_mut().enumerate() {
            for (c, hc) in h.iter().enumerate() {
                *p += self.w[r * hd + c] * hc;
            }
            for (c, xc) in x.iter().enumerate() {
                *p += self.u[r * id + c] * xc;
            }
        }
        let out = pre.iter().map(|v| v.tanh()).collect();
        StepInternal { pre, out }
    }

    /// Accumulates parameter gradients into `grads` and returns
    /// `(grad_x, grad_h_prev)`.
    pub fn step_backward(
        &self,
        x: &[f64],
        h: &[f64],
        internal: &StepInternal,
        grad_out: &[f64],
        grad_h: &[f64],
        grads: &mut Gradients,
    ) -> (Vec<f64>, Vec<f64>) {
        let (hd, id) = (self.hidden_dim, self.input_dim);
        let ga: Vec<f64> = (0..hd)
            .map(|r| (grad_out[r] + grad_h[r]) * (1.0 - internal.out[r] * internal.out[r]))
            .collect();
        let mut gx = vec![0.0; id];
        let mut gh = vec![0.0; hd];
        for (r, g) in ga.iter().enumerate() {
            for c in 0..hd {
                grads.w[r * hd + c] += g * h[c];
                gh[c] += self.w[r * hd + c] * g;
            }
            for c in 0..id {
                grads.u[r * id + c] += g * x[c];
                gx[c] += self.u[r * id + c] * g;
            }
            grads.b[r] += g;
        }
        (gx, gh)
    }

    /// Loss of a plain forward pass.
    pub fn loss(&self, inputs: &[Vec<f64>]) -> f64 {
        let mut h = self.h0.clone();
        let mut total = 0.0;
        for x in inputs {
            h = self.step(x, &h).out;
            total += h.iter().map(|v| v * v).sum::<f64>();
        }
        total
    }
}

pub fn seeded_inputs(t: usize, input_dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..t)
        .map(|_| (0..input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

fn grad_of_output(out: &[f64]) -> Vec<f64> {
    out.iter().map(|v| 2.0 * v).collect()
}

fn square_sum(out: &[f64]) -> f64 {
    out.iter().map(|v| v * v).sum()
}

/// Store-everything backpropagation.
pub fn full_bptt_reference(cell: &ReferenceCell, inputs: &[Vec<f64>]) -> Gradients {
    let t = inputs.len();
    let mut hidden = vec![cell.h0.clone()];
    let mut internals = Vec::with_capacity(t);
    for x in inputs {
        let st = cell.step(x, hidden.last().unwrap());
        hidden.push(st.out.clone());
        internals.push(st);
    }
    let mut grads = Gradients::zeros(cell, t);
    let mut gh = vec![0.0; cell.hidden_dim];
    for p in (1..=t).rev() {
        let st = &internals[p - 1];
        grads.loss += square_sum(&st.out);
        let go = grad_of_output(&st.out);
        let (gx, g_prev) =
            cell.step_backward(&inputs[p - 1], &hidden[p - 1], st, &go, &gh, &mut grads);
        grads.inputs[p - 1] = gx;
        gh = g_prev;
    }
    grads.initial_hidden = gh;
    grads
}

/// [`ChainTape`] over a reference cell and a fixed input sequence.
pub struct RefTape<'a> {
    cell: &'a ReferenceCell,
    inputs: &'a [Vec<f64>],
    grads: Gradients,
}

impl<'a> RefTape<'a> {
    pub fn new(cell: &'a ReferenceCell, inputs: &'a [Vec<f64>]) -> Self {
        RefTape {
            cell,
            inputs,
            grads: Gradients::zeros(cell, inputs.len()),
        }
    }

    pub fn into_gradients(self) -> Gradients {
        self.grads
    }
}

impl ChainTape for RefTape<'_> {
    type Input = Vec<f64>;
    type Hidden = Vec<f64>;
    type Internal = StepInternal;
    type Output = Vec<f64>;
    type Grad = Vec<f64>;

    fn initial_hidden(&self) -> Vec<f64> {
        self.cell.h0.clone()
    }

    fn get_input(&self, pos: usize) -> Vec<f64> {
        self.inputs[pos - 1].clone()
    }

    fn forward(&self, input: &Vec<f64>, hidden: &Vec<f64>) -> StepInternal {
        self.cell.step(input, hidden)
    }

    fn next_hidden(&self, internal: &StepInternal) -> Vec<f64> {
        internal.out.clone()
    }

    fn output(&self, internal: &StepInternal) -> Vec<f64> {
        internal.out.clone()
    }

    fn terminal_grad_hidden(&self) -> Vec<f64> {
        vec![0.0; self.cell.hidden_dim]
    }

    fn set_output_and_get_grad_output(&mut self, _pos: usize, output: Vec<f64>) -> Vec<f64> {
        self.grads.loss += square_sum(&output);
        grad_of_output(&output)
    }

    fn backward(
        &mut self,
        input: &Vec<f64>,
        hidden: &Vec<f64>,
        internal: &StepInternal,
        grad_output: Vec<f64>,
        grad_hidden: Vec<f64>,
    ) -> (Vec<f64>, Vec<f64>) {
        self.cell.step_backward(
            input,
            hidden,
            internal,
            &grad_output,
            &grad_hidden,
            &mut self.grads,
        )
    }

    fn set_grad_input(&mut self, pos: usize, grad_input: Vec<f64>) {
        self.grads.inputs[pos - 1] = grad_input;
    }

    fn fingerprint(&self, hidden: &Vec<f64>) -> Option<u64> {
        let mut hasher = DefaultHasher::new();
        for v in hidden {
            v.to_bits().hash(&mut hasher);
        }
        Some(hasher.finish())
    }
}

/// Executes `policy` on the reference chain. The cost model, when given,
/// must match the one the policy was built with.
pub fn run_under_policy(
    cell: &ReferenceCell,
    inputs: &[Vec<f64>],
    policy: &PolicyTable,
    budget: MemoryBudget,
    model: Option<&CostModel>,
) -> Result<(Gradients, ExecutionTrace)> {
    if let (Some(m), Some(own)) = (model, policy.cost_model()) {
        if !own.same_memory(m) {
            return Err(crate::error::Error::Config(format!(
                "policy was built for alpha={}, beta={} but the model has alpha={}, beta={}",
                own.alpha, own.beta, m.alpha, m.beta
            )));
        }
    }
    let mut tape = RefTape::new(cell, inputs);
    let options = ExecutionOptions {
        checksum: true,
        record_events: false,
    };
    let run = execute(policy, &mut tape, inputs.len(), budget, options)?;
    let mut grads = tape.into_gradients();
    grads.initial_hidden = run.grad_initial_hidden;
    Ok((grads, run.trace))
}

type Perturb<'a> = dyn Fn(&mut ReferenceCell, &mut Vec<Vec<f64>>, f64) + 'a;

/// Largest relative error, `|fd - analytic| / max(|fd|, |analytic|)` in the
/// Euclidean norm per parameter block, between [`full_bptt_reference`] and
/// central differences with step `h`.
pub fn finite_difference_error(cell: &ReferenceCell, inputs: &[Vec<f64>], h: f64) -> f64 {
    let analytic = full_bptt_reference(cell, inputs);

    let central = |perturb: &Perturb<'_>| {
        let (mut c, mut x) = (cell.clone(), inputs.to_vec());
        perturb(&mut c, &mut x, h);
        let up = c.loss(&x);
        let (mut c, mut x) = (cell.clone(), inputs.to_vec());
        perturb(&mut c, &mut x, -h);
        (up - c.loss(&x)) / (2.0 * h)
    };

    let rel = |fd: &[f64], an: &[f64]| {
        let diff: f64 = fd
            .iter()
            .zip(an)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = fd
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(an.iter().map(|v| v * v).sum::<f64>().sqrt());
        if scale == 0.0 {
            0.0
        } else {
            diff / scale
        }
    };

    let mut worst: f64 = 0.0;
    let fd_w: Vec<f64> = (0..cell.w.len())
        .map(|k| central(&|c, _, d| c.w[k] += d))
        .collect();
    worst = worst.max(rel(&fd_w, &analytic.w));
    let fd_u: Vec<f64> = (0..cell.u.len())
        .map(|k| central(&|c, _, d| c.u[k] += d))
        .collect();
    worst = worst.max(rel(&fd_u, &analytic.u));
    let fd_b: Vec<f64> = (0..cell.b.len())
        .map(|k| central(&|c, _, d| c.b[k] += d))
        .collect();
    worst = worst.max(rel(&fd_b, &analytic.b));
    let fd_h: Vec<f64> = (0..cell.h0.len())
        .map(|k| central(&|c, _, d| c.h0[k] += d))
        .collect();
    worst = worst.max(rel(&fd_h, &analytic.initial_hidden));
    for p in 0..inputs.len() {
        let fd_x: Vec<f64> = (0..cell.input_dim)
            .map(|k| central(&|_, x, d| x[p][k] += d))
            .collect();
        worst = worst.max(rel(&fd_x, &analytic.inputs[p]));
    }
    worst
}
