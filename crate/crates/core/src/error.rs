use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum QgpError {
    #[error("insufficient data: {available} points in window, {required} required")]
    InsufficientData { available: usize, required: usize },

    #[error("register of {0} qubits exceeds the exact-simulation bound of {max}", max = crate::statevector::MAX_QUBITS)]
    TooManyQubits(usize),

    #[error("size mismatch: expected {expected}, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("length mismatch: {left} predictions vs {right} targets")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("Gram matrix of size {size} is not positive definite even with jitter {max_jitter:e}")]
    FactorizationFailure { size: usize, max_jitter: f64 },

    #[error("point outside the model domain: {0}")]
    OutOfDomain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("objective evaluation failed: {0}")]
    ObjectiveFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl QgpError {
    /// True for errors caused by the input data rather than by numerics or usage.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            QgpError::InsufficientData { .. }
                | QgpError::InvalidData(_)
                | QgpError::EmptyInput(_)
                | QgpError::OutOfDomain(_)
                | QgpError::Io(_)
                | QgpError::Csv(_)
                | QgpError::Json(_)
        )
    }

    /// True for numerical failures (non-factorizable Gram matrices).
    pub fn is_numerical(&self) -> bool {
        matches!(self, QgpError::FactorizationFailure { .. })
    }
}

pub type Result<T> = std::result::Result<T, QgpError>;
