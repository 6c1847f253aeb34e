use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid probability space: {0}")]
    InvalidSpace(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("block {block} has zero mass under the given density")]
    ZeroBlockMass { block: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("fixed-point iteration did not converge after {iterations} steps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("brute-force oracle supports at most 3 institutions, got {0}")]
    DimensionTooLarge(usize),
    #[error("conditioning event is empty")]
    EmptyConditioningEvent,
    #[error("risk map is inconsistent: probes {first} and {second} share an aggregate but have different risk")]
    InconsistentRho { first: usize, second: usize },
    #[error("unknown axiom '{0}'")]
    UnknownAxiom(String),
}
