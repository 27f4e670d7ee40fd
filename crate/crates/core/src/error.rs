use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("step-size precondition violated at index {index}: gamma * lambda2 = {product}")]
    StepPrecondition { index: usize, product: f64 },

    #[error("matrix is not positive definite: smallest eigenvalue {0}")]
    NotPositiveDefinite(f64),

    #[error("root finder did not converge after {sweeps} sweeps (max residual {residual:e})")]
    RootFinder { sweeps: usize, residual: f64 },

    #[error("parameter {0:?} lies outside the stability region")]
    Unstable(Vec<f64>),

    #[error("oracle failed at {point:?}: {reason}")]
    Oracle { point: Vec<f64>, reason: String },

    #[error("gain evaluation failed at step {step}: {reason}")]
    Gain { step: usize, reason: String },

    #[error("estimate diverged at step {step}: norm {norm:e} exceeds {limit:e}")]
    Divergence { step: usize, norm: f64, limit: f64 },

    #[error("horizon {horizon}, replication {replication}: {source}")]
    Replication {
        horizon: usize,
        replication: usize,
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn ensure_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}
