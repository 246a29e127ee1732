use thiserror::Error;

/// Errors surfaced by the tabular simulator.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A stochastic object failed a normalization or support check.
    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    /// Bad construction parameters (e.g. connection factor above the state count).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An iterative solver ran out of sweeps before meeting its tolerance.
    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    ConvergenceFailure {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// A gradient-based learner diverged; carries diagnostics for the caller.
    #[error("learning failure: {0}")]
    LearningFailure(String),

    /// A brute-force enumeration would exceed its trajectory budget.
    #[error("instance too large: {0} trajectories exceeds the enumeration cap of {1}")]
    InstanceTooLarge(usize, usize),

    /// Serialization problems in world/log/record files.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
