//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of market construction, condition checking, strategy
/// evaluation, simulation, and quadrature.
///
/// Variant names are stable identifiers: the CLI serializes them verbatim
/// into its JSON error objects via [`Error::name`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("probabilities sum to {sum}, expected 1 within {tolerance}")]
    ProbSumError { sum: f64, tolerance: f64 },

    #[error("probability at index {index} is not strictly positive: {value}")]
    NonPositiveProb { index: usize, value: f64 },

    #[error("weight at index {index} is negative: {value}")]
    NegativeWeight { index: usize, value: f64 },

    #[error("reference weight at index {index} is not strictly positive: {value}")]
    NonPositiveReference { index: usize, value: f64 },

    #[error("outcome value {value} appears more than once")]
    DuplicateOutcome { value: f64 },

    #[error("outcome count must be at least 2, got {m}")]
    InvalidM { m: usize },

    #[error("{field} has length {got}, expected {expected}")]
    LengthMismatch {
        field: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{field} contains a non-finite value")]
    NonFiniteInput { field: &'static str },

    #[error("{which} is not symmetric positive-definite")]
    NotPositiveDefinite { which: &'static str },

    #[error("outcome and reference covariances are equal within tolerance {tolerance}")]
    CovariancesEqual { tolerance: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("quadrature did not converge: refinement moved the value by {error_estimate}, tolerance {tolerance}")]
    QuadratureNotConverged { error_estimate: f64, tolerance: f64 },

    #[error("outcome {index} has zero return but probability mass {prob} (scaled mass differs from 1), so no betting fraction reproduces the density there")]
    ZeroReturnOutcome { index: usize, prob: f64 },

    #[error("no grid point has |return| above {threshold}")]
    AllReturnsNearZero { threshold: f64 },

    #[error("betting fraction {value} is outside the admissible range")]
    DOutOfRange { value: f64 },

    #[error("no martingale strategy exists (candidate spread {max_spread})")]
    NoMartingaleStrategy { max_spread: f64 },

    #[error("strategy produced a negative stake: {stake}")]
    NegativeStake { stake: f64 },

    #[error("wealth factor {factor} is not strictly positive at step {step} (outcome prefix {path:?})")]
    RuinViolation {
        step: usize,
        factor: f64,
        path: Vec<usize>,
    },

    #[error("enumeration of {required} sequences exceeds the cap of {cap}")]
    EnumerationTooLarge { required: u64, cap: u64 },

    #[error("outcome index {index} out of range for a market with {m} outcomes")]
    OutcomeIndexOutOfRange { index: usize, m: usize },

    #[error("strategy table has {len} entries but the history requires index {index}")]
    TableIncomplete { index: usize, len: usize },

    #[error("strategy cannot be evaluated on this history: {detail}")]
    UnsupportedHistory { detail: &'static str },

    #[error("invalid grid specification: {detail}")]
    InvalidGridSpec { detail: &'static str },

    #[error("grid density at index {index} is negative: {value}")]
    NegativeDensity { index: usize, value: f64 },

    #[error("grid quadrature weight at index {index} is not strictly positive: {value}")]
    NonPositiveQuadWeight { index: usize, value: f64 },

    #[error("i/o failure: {message}")]
    Io { message: String },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io {
            message: e.to_string(),
        }
    }
}

impl Error {
    /// Stable machine-readable name of the error variant.
    pub fn name(&self) -> &'static str {
        match self {
            Error::ProbSumError { .. } => "ProbSumError",
            Error::NonPositiveProb { .. } => "NonPositiveProb",
            Error::NegativeWeight { .. } => "NegativeWeight",
            Error::NonPositiveReference { .. } => "NonPositiveReference",
            Error::DuplicateOutcome { .. } => "DuplicateOutcome",
            Error::InvalidM { .. } => "InvalidM",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::NonFiniteInput { .. } => "NonFiniteInput",
            Error::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            Error::CovariancesEqual { .. } => "CovariancesEqual",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::QuadratureNotConverged { .. } => "QuadratureNotConverged",
            Error::ZeroReturnOutcome { .. } => "ZeroReturnOutcome",
            Error::AllReturnsNearZero { .. } => "AllReturnsNearZero",
            Error::DOutOfRange { .. } => "DOutOfRange",
            Error::NoMartingaleStrategy { .. } => "NoMartingaleStrategy",
            Error::NegativeStake { .. } => "NegativeStake",
            Error::RuinViolation { .. } => "RuinViolation",
            Error::EnumerationTooLarge { .. } => "EnumerationTooLarge",
            Error::OutcomeIndexOutOfRange { .. } => "OutcomeIndexOutOfRange",
            Error::TableIncomplete { .. } => "TableIncomplete",
            Error::UnsupportedHistory { .. } => "UnsupportedHistory",
            Error::InvalidGridSpec { .. } => "InvalidGridSpec",
            Error::NegativeDensity { .. } => "NegativeDensity",
            Error::NonPositiveQuadWeight { .. } => "NonPositiveQuadWeight",
            Error::Io { .. } => "Io",
        }
    }
}
