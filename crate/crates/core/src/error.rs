use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("bad arguments: {0}")]
    BadArgs(String),

    #[error("sample is empty")]
    EmptySample,

    #[error("no kernel mass in cell: {0}")]
    EmptyCell(String),

    #[error("observed matrix is numerically singular (condition number {cond:.3e})")]
    SingularInput { cond: f64 },

    #[error("eigenvalue with imaginary part {imag:.3e} exceeds tolerance {tol:.3e}")]
    ComplexSpectrum { imag: f64, tol: f64 },

    #[error("eigenvector ordering is ambiguous: {0}")]
    AmbiguousOrdering(String),

    #[error("latent distribution not identified: eigenvalues {a} and {b} coincide")]
    NonIdentified { a: f64, b: f64 },

    #[error("cell too thin for the latent posterior: f(n|z) = {mass:.3e} below {eps:.3e}")]
    ThinCell { mass: f64, eps: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("design matrix is rank deficient (rank {rank} < {dim})")]
    RankDeficient { rank: usize, dim: usize },

    #[error("Gauss-Newton did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },

    #[error("Hessian is singular")]
    SingularHessian,

    #[error("schema error at row {row}, column '{column}': {msg}")]
    Schema { row: usize, column: String, msg: String },

    #[error("integrity error at row {row}: {msg}")]
    Integrity { row: usize, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
