use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported spectrum: {0}")]
    UnsupportedSpectrum(String),

    #[error("eigenvalue {0} is not in the linearization spectrum")]
    UnknownEigenvalue(f64),

    /// The state left the escape ball; `time` is the elapsed integration time.
    #[error("flow blow-up: |x| exceeded {radius:e} at t = {time}")]
    BlowUp { time: f64, radius: f64 },

    #[error("kernel domain violation: {0}")]
    Domain(String),

    #[error("degenerate solution: {0}")]
    Degenerate(String),

    #[error("ill-conditioned system (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("optimizer diverged: {0}")]
    Divergence(String),

    #[error("inconclusive check: {0}")]
    Inconclusive(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
