use thiserror::Error;

use crate::chebyshev::ChebSeries;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// The LP solver hit its iteration cap. `incumbent` is the last basic
    /// solution visited, together with its true minimax deviation.
    #[error("solver did not converge after {iterations} iterations (incumbent objective {best_objective:.3e})")]
    SolverFailure {
        iterations: usize,
        best_objective: f64,
        incumbent: Option<Box<ChebSeries>>,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("conditional expectation undefined: no probability mass below the threshold")]
    UndefinedConditional,

    #[error("failure budget exhausted: requested {requested:.3e} with {remaining:.3e} remaining")]
    BudgetExhausted { requested: f64, remaining: f64 },

    #[error("singular quantile: density at the quantile vanishes")]
    SingularQuantile,

    #[error("no (d, eps_A) cell reaches target error {target:.3e}; best achieved {best:.3e}")]
    NoFeasibleParameters { target: f64, best: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
