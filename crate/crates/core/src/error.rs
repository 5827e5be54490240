use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Each variant maps onto one CLI exit code through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("Gram matrix is singular or ill-conditioned (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("degenerate effective channel for device {device}: combiner is orthogonal to its channel")]
    DegenerateChannel { device: usize },

    #[error("power constraint violated by device {device}: c^2|s|^2 = {required:.6e} > dP = {budget:.6e}")]
    PowerInfeasible { device: usize, required: f64, budget: f64 },

    #[error("c_delta = {given} is below the minimal admissible value {minimal}")]
    InconsistentCDelta { given: f64, minimal: f64 },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 configuration, 3 infeasibility, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) | Error::Config(_) | Error::InconsistentCDelta { .. } => 2,
            Error::DegenerateChannel { .. } | Error::PowerInfeasible { .. } => 3,
            Error::Singular { .. } | Error::Invariant(_) => 4,
            Error::Io(_) | Error::Csv(_) => 1,
        }
    }
}

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
