use nalgebra::DVector;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// The renormalization heuristic saw no positive component. The uniform
    /// point is carried along so callers can keep going.
    #[error("degenerate input to renormalization projection (no positive component)")]
    DegenerateProjection { fallback: DVector<f64> },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("covariance block is not symmetric (max asymmetry {asymmetry:e})")]
    AsymmetricCovariance { asymmetry: f64 },

    #[error("step size {eta} exceeds 1/L = {max} (requires eta <= 1/L)")]
    StepSizeTooLarge { eta: f64, max: f64 },

    #[error("predictor not ready: needs {needed} observations, have {have}")]
    NotReady { needed: usize, have: usize },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("iteration cap of {0} reached before convergence")]
    IterationCap(usize),

    #[error("expert pool is full ({0} experts)")]
    PoolFull(usize),

    #[error("all expert weights vanished; gamma = {gamma} is too large for the loss scale")]
    WeightUnderflow { gamma: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
