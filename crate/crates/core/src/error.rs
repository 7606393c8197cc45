use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("Newton iteration did not converge at step {step} (residual {residual:e})")]
    NewtonFailure { step: usize, residual: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("rollout diverged")]
    Diverged,

    #[error("initial surrogate outside feasible set")]
    InfeasibleStart,

    #[error("empty sample list")]
    EmptySamples,

    #[error("degenerate reference: {0}")]
    DegenerateReference(&'static str),

    #[error("derivative check failed for {what}: relative error {rel_err:e}")]
    DerivativeCheck { what: String, rel_err: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Configuration problems map to exit code 2, everything else to 3.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Shape(_) | Error::Json(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
