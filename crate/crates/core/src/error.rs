use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quaternion norm {norm} deviates from 1 by more than 1e-6")]
    NonUnitQuaternion { norm: f64 },

    #[error("matrix is not a rotation (orthogonality error {orth_err:.3e}, det {det})")]
    NotARotation { orth_err: f64, det: f64 },

    #[error("singular value {value} outside the supported range |s| <= {limit}")]
    OutOfRange { value: f64, limit: f64 },

    #[error("invalid quadrature configuration: {0} trapezoids (need odd and >= 3)")]
    InvalidQuadrature(usize),

    #[error("vector norm {0:.3e} too small to normalize")]
    Degenerate(f64),

    #[error("structural mismatch: {0}")]
    Structure(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("Monte-Carlo oracle refused: {0}")]
    Oracle(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
