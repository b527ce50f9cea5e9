use thiserror::Error;

/// Errors raised by the model, inference and adaptation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("precision must be positive and finite, got {0}")]
    NonPositivePrecision(f64),

    /// A parameter violates a model invariant. `field` is a path such as `pi[3]`.
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("degenerate prior row pi[{unit}]: no component has positive mass")]
    DegeneratePrior { unit: usize },

    #[error("non-finite intermediate value while updating unit {unit}")]
    NonFinite { unit: usize },

    #[error("objective is not finite near coordinate {coordinate}")]
    NonFiniteEvaluation { coordinate: usize },

    #[error("unit index {index} out of range for n = {n}")]
    UnitOutOfRange { index: usize, n: usize },

    #[error("unanchored empty component {unit}")]
    UnanchoredEmptyComponent { unit: usize },

    #[error("Dirichlet underflow row {row}")]
    DirichletUnderflow { row: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected,
            got,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
