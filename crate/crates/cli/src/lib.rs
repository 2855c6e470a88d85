//! Library half of the `remat` binary: figure sweeps and CSV output.

pub mod curves;

use std::io;

use remat_core::Error as CoreError;
use thiserror::Error;

/// Sequence-length cap when `REMAT_MAX_T` is unset.
pub const DEFAULT_MAX_T: usize = 4096;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Range(String),
    #[error("{0}")]
    Capacity(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Range(_) => 3,
            CliError::Capacity(_) => 4,
            CliError::Core(e) => match e {
                CoreError::Config(_) | CoreError::Parse { .. } | CoreError::Validation(_) => 2,
                CoreError::OutOfRange { .. } => 3,
                CoreError::Limit(_) | CoreError::Capacity { .. } | CoreError::Infeasible { .. } => {
                    4
                }
                CoreError::Integrity { .. } | CoreError::Io(_) => 1,
            },
            CliError::Io(_) | CliError::Csv(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Solver cap on sequence length, from `REMAT_MAX_T` if set.
pub fn max_t() -> Result<usize> {
    match std::env::var("REMAT_MAX_T") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| {
                CliError::Usage(format!("REMAT_MAX_T must be a positive integer, got {v:?}"))
            }),
        Err(_) => Ok(DEFAULT_MAX_T),
    }
}

pub fn check_cap(t: usize) -> Result<()> {
    let cap = max_t()?;
    if t > cap {
        return Err(CliError::Capacity(format!(
            "t = {t} exceeds the solver cap of {cap}; set REMAT_MAX_T to raise it"
        )));
    }
    Ok(())
}
