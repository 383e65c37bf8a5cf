use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("scalar solve did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("grid functions live on different meshes ({left} vs {right} interior nodes)")]
    MeshMismatch { left: usize, right: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("newton iteration diverged at step {step} (residual {residual:e})")]
    NewtonDivergence { step: usize, residual: f64 },

    #[error("truncation level exceeded cap {cap} at step {step} (norm {norm})")]
    TruncationCapReached { cap: u32, step: usize, norm: f64 },

    #[error("operator is singular: {0}")]
    Singular(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),
}
