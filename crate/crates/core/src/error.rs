use thiserror::Error;

/// Errors produced by the accounting library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PldError {
    #[error("invalid PLD: {0}")]
    InvalidPld(String),

    #[error("not a PLD realization: {0}")]
    InvalidRealization(String),

    #[error("query out of range: {0}")]
    OutOfRange(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("values are not an arithmetic progression: {0}")]
    NotArithmetic(String),

    #[error("grids do not match: {0}")]
    MismatchedGrids(String),

    #[error("indeterminate sum: +inf mass meets -inf mass")]
    IndeterminateSum,

    #[error("enumeration too large: {0}")]
    TooLarge(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

impl PldError {
    /// True for errors that come from the numerical domain of a query rather
    /// than from malformed input.
    pub fn is_numerical_domain(&self) -> bool {
        matches!(
            self,
            PldError::OutOfRange(_)
                | PldError::IndeterminateSum
                | PldError::NotArithmetic(_)
                | PldError::MismatchedGrids(_)
                | PldError::TooLarge(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, PldError>;
