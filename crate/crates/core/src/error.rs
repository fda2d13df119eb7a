use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MfgError {
    /// Argument outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Invalid construction parameters or inconsistent inputs.
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("solver failed: {message} (residual {residual:e} after {iterations} iterations)")]
    Solver {
        message: String,
        residual: f64,
        iterations: usize,
    },
    /// The flow lost monotonicity (gamma_x fell below its floor).
    #[error("degenerate flow: {0}")]
    Degenerate(String),
    #[error("positivity lost: {0}")]
    Positivity(String),
    #[error("singular matrix at pivot {0}")]
    Singular(usize),
}

impl MfgError {
    pub fn domain(msg: impl Into<String>) -> Self {
        MfgError::Domain(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        MfgError::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, MfgError>;
