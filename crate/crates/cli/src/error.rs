use std::fmt;

use koopman_rkhs::Error;

/// A failure with its process exit code and a stable machine-readable kind.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub kind: &'static str,
    pub code: i32,
    pub reason: String,
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_BLOW_UP: i32 = 4;

impl CliError {
    pub fn config(reason: impl Into<String>) -> Self {
        Self {
            kind: "config",
            code: EXIT_CONFIG,
            reason: reason.into(),
        }
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Self {
            kind: "io",
            code: EXIT_NUMERICAL,
            reason: format!("{}: {err}", path.display()),
        }
    }

    /// The single stderr line, e.g. `error: kind=blow_up reason="..."`.
    pub fn line(&self) -> String {
        format!("error: kind={} reason={:?}", self.kind, self.reason)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.reason)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (kind, code) = match &e {
            Error::BlowUp { .. } => ("blow_up", EXIT_BLOW_UP),
            Error::DimensionMismatch { .. } => ("dimension_mismatch", EXIT_NUMERICAL),
            Error::InvalidParameter(_) => ("invalid_parameter", EXIT_NUMERICAL),
            Error::UnsupportedSpectrum(_) => ("unsupported_spectrum", EXIT_NUMERICAL),
            Error::UnknownEigenvalue(_) => ("unknown_eigenvalue", EXIT_NUMERICAL),
            Error::Domain(_) => ("domain", EXIT_NUMERICAL),
            Error::Degenerate(_) => ("degenerate", EXIT_NUMERICAL),
            Error::IllConditioned { .. } => ("ill_conditioned", EXIT_NUMERICAL),
            Error::Divergence(_) => ("divergence", EXIT_NUMERICAL),
            Error::Inconclusive(_) => ("inconclusive", EXIT_NUMERICAL),
        };
        Self {
            kind,
            code,
            reason: e.to_string(),
        }
    }
}
