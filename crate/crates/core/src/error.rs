use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mask contains no object pixels")]
    EmptyMask,

    #[error("mask has {} disconnected regions (sizes {sizes:?})", sizes.len())]
    DisconnectedMask { sizes: Vec<usize> },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("input is effectively rank deficient (sigma_3 / sigma_1 = {ratio:e})")]
    RankDeficient { ratio: f64 },

    #[error("integrability system is ambiguous beyond GBR (smallest singular values {smallest:e} and {second:e})")]
    AmbiguousIntegrability { smallest: f64, second: f64 },

    #[error("pixel column {column} has no observed entries")]
    UnobservedColumn { column: usize },

    #[error("image row {row} is all zero")]
    ZeroRow { row: usize },

    #[error("joint solver diverged at outer iteration {outer}: objective {objective:e} exceeds 1e3 x initial {initial:e}")]
    Divergence {
        outer: usize,
        objective: f64,
        initial: f64,
        trace: Vec<f64>,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error("config: {0}")]
    Config(String),
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

    /// Whether the error came from reading or validating input data rather
    /// than from a solver.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Format { .. }
                | Error::Csv(_)
                | Error::Image(_)
                | Error::Config(_)
                | Error::EmptyMask
                | Error::DisconnectedMask { .. }
                | Error::UnobservedColumn { .. }
                | Error::ZeroRow { .. }
                | Error::Dimension(_)
                | Error::InvalidArgument(_)
        )
    }
}
