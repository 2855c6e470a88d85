//! Optimal memory-budgeted checkpointing for backpropagation through time.
//!
//! [`solver`] builds policy tables by dynamic programming, [`executor`] runs
//! them against a [`executor::ChainTape`] with a bounded checkpoint stack,
//! [`baselines`] holds reference strategies, the exhaustive search oracle and
//! the bound checks, [`hetero`] handles chains with per-layer costs and sizes,
//! and [`refchain`] is a small numeric recurrent chain for gradient checks.

pub mod baselines;
pub mod error;
pub mod executor;
pub mod hetero;
pub mod policy;
pub mod refchain;
pub mod solver;

pub use error::{Error, Result};
pub use policy::{Algorithm, Cost, CostModel, Decision, MemoryBudget, PolicyTable, PushKind};
pub use solver::{solve, solve_hsm, solve_ism, solve_msm, SolveRequest};
