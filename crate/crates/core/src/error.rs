use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid solver, executor or model parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// A policy document or chain file could not be parsed.
    #[error("parse error at `{field}`: {message}")]
    Parse { field: String, message: String },

    /// A document parsed but describes a table that breaks an invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A query fell outside the tables a policy was built for.
    #[error("({t}, {m}) is outside the policy range t <= {t_max}, m <= {m_max}")]
    OutOfRange {
        t: usize,
        m: usize,
        t_max: usize,
        m_max: usize,
    },

    #[error("checkpoint stack overflow: {needed} units needed, capacity {capacity}")]
    Capacity { needed: usize, capacity: usize },

    /// A recomputed hidden state did not match the one first produced.
    #[error(
        "integrity error: recomputed hidden state at position {pos} differs from the original"
    )]
    Integrity { pos: usize },

    #[error(
        "infeasible: no layer fits in memory {m_max}; smallest admissible budget is {min_budget}"
    )]
    Infeasible { m_max: usize, min_budget: usize },

    /// A request exceeds a solver or search size cap.
    #[error("limit exceeded: {0}")]
    Limit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
