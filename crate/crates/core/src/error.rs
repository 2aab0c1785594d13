use thiserror::Error;

/// Failures of [`crate::weights::normalize_log_weights`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum WeightError {
    #[error("all particle weights are zero")]
    AllWeightsZero,
    #[error("log-weight is NaN or +inf")]
    InvalidWeight,
    #[error("empty weight vector")]
    Empty,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Weights(#[from] WeightError),
    #[error("invalid probability simplex: {0}")]
    InvalidSimplex(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("model provides no sufficient statistics for particle learning")]
    MissingSuffStats,
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),
    #[error("label {label} exceeds the next free label {max}")]
    InvalidLabel { label: usize, max: usize },
    #[error("individual {0} appears twice in the subset")]
    DuplicateMember(usize),
    #[error("series has zero variance")]
    DegenerateSeries,
    #[error("{collapsed} of {runs} pilot runs collapsed at N = {particles}")]
    CollapseDominated { collapsed: usize, runs: usize, particles: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
