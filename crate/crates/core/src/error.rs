use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix has non-finite entries")]
    NonFinite,

    #[error("matrix is not Hermitian (deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix is not unitary (deviation {deviation:e})")]
    NotUnitary { deviation: f64 },

    #[error("eigensolver did not converge for a {dim}x{dim} matrix")]
    EigenNonConvergence { dim: usize },

    #[error("unitary logarithm is ill-conditioned (reconstruction error {residual:e})")]
    IllConditionedLog { residual: f64 },

    #[error("trace is {trace}, expected 1")]
    BadTrace { trace: f64 },

    #[error("eigenvalue {value:e} is negative")]
    NegativeEigenvalue { value: f64 },

    #[error("spectra differ by {deviation:e}")]
    SpectraMismatch { deviation: f64 },

    #[error("expected {expected} initial phases or blocks, got {got}")]
    PhaseArity { expected: usize, got: usize },

    #[error("initial block {index} has size {got}, degeneracy group has size {expected}")]
    BlockSize { index: usize, expected: usize, got: usize },

    #[error("geometric phases are undefined for a degenerate spectrum")]
    DegenerateSpectrum,

    #[error("state is not pure (purity {purity})")]
    NotPure { purity: f64 },

    #[error("Hamiltonian generates no motion of the state")]
    NoMotion,

    #[error("zero Hamiltonian")]
    ZeroHamiltonian,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
