use thiserror::Error;

/// Errors raised by problem construction, the solvers and the file loaders.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LqError {
    #[error("dimension mismatch in {what} at index {index}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        index: usize,
        expected: String,
        found: String,
    },

    #[error("{what} at index {index} contains a non-finite entry")]
    NonFinite { what: String, index: usize },

    #[error("{what} at index {index} is not symmetric (deviation {deviation:e})")]
    Asymmetric {
        what: String,
        index: usize,
        deviation: f64,
    },

    #[error("non-finite intermediate in {stage} at step {step}")]
    NumericalFailure { stage: &'static str, step: usize },

    #[error("feedback law covers {window} steps but the horizon is {horizon}; use apply_weak_law for truncated laws")]
    TruncatedWindow { window: usize, horizon: usize },

    #[error("problem is not closed-loop solvable: {condition} violated at step {step}")]
    NotClosedLoopSolvable { step: usize, condition: String },

    #[error("weak law unavailable: {0}")]
    WeakLawUnavailable(String),

    #[error("invalid epsilon schedule: {0}")]
    InvalidSchedule(String),

    #[error("problem file: {0}")]
    Schema(String),

    #[error("runtime: {0}")]
    Runtime(String),
}

pub type Result<T> = std::result::Result<T, LqError>;

impl LqError {
    pub(crate) fn mismatch(
        what: impl Into<String>,
        index: usize,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        LqError::DimensionMismatch {
            what: what.into(),
            index,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// True for errors caused by caller input rather than numerical breakdown.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, LqError::NumericalFailure { .. } | LqError::Runtime(_))
    }
}
