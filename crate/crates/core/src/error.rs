use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{module}: invalid input: {message}")]
    InvalidInput {
        module: &'static str,
        message: String,
    },

    #[error("{module}: dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch {
        module: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("kernels: growth estimate {estimate} exceeds declared constant {declared} at {witness:?}")]
    GrowthViolation {
        estimate: f64,
        declared: f64,
        witness: Vec<f64>,
    },

    #[error("dynamics: non-finite state at step {step} (t = {time})")]
    IntegrationFailure { step: usize, time: f64 },

    #[error("sparse_optimizer: brute-force budget exceeded ({candidates} candidates > {budget})")]
    BudgetExceeded { candidates: u128, budget: u128 },

    #[error("measures: transport solver failed: {0}")]
    Transport(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(module: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidInput {
            module,
            message: message.into(),
        }
    }

    pub(crate) fn dims(module: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            module,
            expected,
            got,
        }
    }

    /// Stable, module-qualified failure code used in run manifests.
    pub fn code(&self) -> String {
        match self {
            Error::InvalidInput { module, .. } => format!("{module}.invalid_input"),
            Error::DimensionMismatch { module, .. } => format!("{module}.dimension_mismatch"),
            Error::GrowthViolation { .. } => "kernels.growth_violation".into(),
            Error::IntegrationFailure { .. } => "dynamics.integration_failure".into(),
            Error::BudgetExceeded { .. } => "sparse_optimizer.budget_exceeded".into(),
            Error::Transport(_) => "measures.transport_failure".into(),
            Error::Io(_) => "io.failure".into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
