use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sphere coverage: {0}")]
    Coverage(String),

    #[error("denoiser failed: {0}")]
    Denoiser(String),

    #[error("depth estimator failed: {0}")]
    DepthEstimator(String),

    #[error("optimization diverged: {0}")]
    Divergence(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("timed out waiting for {0}")]
    Timeout(PathBuf),

    #[error("output directory {0} is locked by another process")]
    Locked(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Whether the error stems from bad user input rather than a runtime failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidCamera(_)
                | Error::DimensionMismatch(_)
                | Error::InvalidInput(_)
                | Error::Config(_)
                | Error::Format { .. }
                | Error::Image { .. }
        )
    }

    /// Short machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidCamera(_) => "invalid_camera",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::InvalidInput(_) => "invalid_input",
            Error::Coverage(_) => "coverage",
            Error::Denoiser(_) => "denoiser",
            Error::DepthEstimator(_) => "depth_estimator",
            Error::Divergence(_) => "divergence",
            Error::Config(_) => "config",
            Error::Format { .. } => "format",
            Error::Timeout(_) => "timeout",
            Error::Locked(_) => "locked",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
