use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("component count mismatch: expected {expected}, got {got}")]
    ComponentMismatch { expected: usize, got: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch { context: &'static str, expected: usize, got: usize },

    #[error("grid mismatch between field and {0}")]
    GridMismatch(&'static str),

    #[error("problem kind mismatch: {0}")]
    WrongProblem(&'static str),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid sparse matrix: {0}")]
    InvalidMatrix(String),

    #[error("row {row} of the residual depends on columns missing from the declared pattern")]
    PatternMismatch { row: usize },

    #[error("row {row} has no diagonal entry in its sparsity pattern")]
    MissingDiagonal { row: usize },

    #[error("ILU breakdown at row {row}: pivot {pivot} after shift")]
    IluBreakdown { row: usize, pivot: f64 },

    #[error("matrix too large for dense estimate: {n} > {limit}")]
    Oversize { n: usize, limit: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("invalid network architecture: {0}")]
    InvalidArch(String),

    #[error("grid {nx}x{ny} is not divisible by {factor} required by the encoder depth")]
    NotDivisible { nx: usize, ny: usize, factor: usize },

    #[error("tape was recorded for a different parameter set")]
    StaleTape,

    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),

    #[error("reference solution has zero norm")]
    ZeroNormReference,

    #[error("Picard iteration did not converge after {iterations} outer iterations (last change {last_change:e})")]
    PicardNotConverged { iterations: usize, last_change: f64, history: Vec<f64> },

    #[error("linear solve failed to converge: relative residual {residual:e} after {iterations} iterations")]
    SolveFailed { iterations: usize, residual: f64 },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
}
