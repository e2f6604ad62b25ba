use thiserror::Error;

/// Errors produced by the decomposition pipeline and the state-reduction maps.
#[derive(Error, Debug)]
pub enum Error {
    #[error("matrix is not Hermitian: ||m - m^H||_F = {residual:.3e} exceeds {limit:.3e}")]
    NotHermitian { residual: f64, limit: f64 },

    #[error("eigensolver failed to converge on a {dim}x{dim} matrix")]
    EigFailure { dim: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("operator is not a projection: {reason}")]
    NotProjection { reason: String },

    #[error("spectral post-processing failed: {0}")]
    SpectralFailure(String),

    #[error("procedure did not converge: {0}")]
    NonConvergence(String),

    #[error("degenerate completeness normalization: |1 - alpha| = {value:.3e}")]
    DegenerateNormalization { value: f64 },

    #[error("table has non-rectangular blocks; transpose is undefined")]
    NotRectangular,

    #[error("table block is not compact: {0}")]
    NonCompact(String),

    #[error("enumeration too large: {count} candidates exceed cap {cap}")]
    EnumerationTooLarge { count: u128, cap: u128 },

    #[error("per-site operator is not diagonalizable in a product basis: {0}")]
    NotProductDiagonalizable(String),

    #[error("verification failed for generator {generator}: residual {residual:.3e}")]
    VerificationFailed { generator: usize, residual: f64 },

    #[error("candidate family is empty")]
    EmptyFamily,

    #[error("invalid operand: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
