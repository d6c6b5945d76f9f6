use thiserror::Error;

/// Errors raised by the toolkit.
///
/// The variants map onto three caller-visible classes: bad input
/// (`Validation`, `Domain`), numerical failure (`Convergence`,
/// `Conditioning`) and I/O (`Io`, `Json`).
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("convergence error: solver stopped after {iterations} iterations with KKT residual {residual:.3e}")]
    Convergence { iterations: usize, residual: f64 },

    #[error("conditioning error: {context} (minimum eigenvalue {min_eigenvalue:.3e})")]
    Conditioning { context: String, min_eigenvalue: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Domain(_) => "domain",
            Error::Convergence { .. } => "convergence",
            Error::Conditioning { .. } => "conditioning",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// True for numerical failures (as opposed to invalid input).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Convergence { .. } | Error::Conditioning { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
