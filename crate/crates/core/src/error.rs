use thiserror::Error;

/// Errors raised by the lazywalk toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("graph is not connected: vertex {0} cannot be reached from vertex 0")]
    Irreducible(String),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("iteration did not converge after {iterations} steps (marginal gap {gap:e})")]
    NonConvergence { iterations: usize, gap: f64 },

    #[error("no coupling supported on the mask matches the marginals (stalled gap {gap:e})")]
    Infeasible { gap: f64 },

    #[error("bridge from {from} to {to} has zero reference mass")]
    UnreachableBridge { from: usize, to: usize },

    #[error("time {0} is outside the domain of this quantity")]
    Domain(f64),

    #[error("state {0} carries no mass at this time; its jump kernel is undefined")]
    UndefinedState(usize),

    #[error("no bridge field was built for pair ({0}, {1})")]
    MissingField(usize, usize),

    #[error("{context}: {message}")]
    Parse { context: String, message: String },

    #[error("hypotheses violated: {}", .0.join(", "))]
    Hypothesis(Vec<String>),

    #[error("{name} sums to {sum}, expected 1")]
    Normalization { name: String, sum: f64 },

    #[error("bridge acceptance rate {rate:e} fell below {floor:e}; try a smaller k")]
    AcceptanceTooLow { rate: f64, floor: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
