use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("mesh validation failed: {0}")]
    MeshValidation(String),

    #[error("mesh file error at line {line}: {msg}")]
    MeshParse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },

    #[error("matrix is not symmetric positive definite (p'Ap = {curvature:.3e})")]
    NotSpd { curvature: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("mesh not K-admissible for TPFA: cell {cell}, face {face} (angle {angle:.3e} rad)")]
    NotAdmissible { cell: usize, face: usize, angle: f64 },

    #[error("scheme is not coercive (gamma = {gamma:.6e})")]
    NonCoercive { gamma: f64 },

    #[error("no invertible face group for face {face}")]
    EmptyGroupSet { face: usize },

    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),

    #[error("unknown case `{0}`")]
    UnknownCase(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
