use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty scope for {0}")]
    EmptyScope(&'static str),
    #[error("row {row}: label {label} out of range (must be < {bound})")]
    LabelOutOfRange { row: usize, label: usize, bound: usize },
    #[error("row {row}: non-finite value in {what}")]
    NonFinite { what: &'static str, row: usize },
    #[error("class {0} has no labeled samples")]
    EmptyClass(usize),
    #[error("need {needed} distinct points, only {available} available")]
    InsufficientPoints { needed: usize, available: usize },
    #[error("non-finite gradient at step {step} (entry {row},{col}, value {value})")]
    NonFiniteGradient {
        step: u64,
        row: usize,
        col: usize,
        value: f64,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
