use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate batch: batch normalization needs at least 2 samples in train mode, got {0}")]
    DegenerateBatch(usize),

    #[error("degenerate class: {0}")]
    DegenerateClass(String),

    #[error("undefined statistic: {0}")]
    Statistic(String),

    #[error("metric undefined: no {class} pixels in the reference")]
    Metric { class: &'static str },

    #[error("registry error: {0}")]
    Registry(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format { offset, message: msg.into() }
    }

    /// Stable machine-readable class name, used for CLI exit codes and manifests.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Config(_) | Error::Parameter(_) => "config",
            Error::Format { .. } | Error::Json(_) => "format",
            Error::Numeric(_) => "numeric",
            Error::DegenerateBatch(_) | Error::DegenerateClass(_) => "data",
            Error::Statistic(_) | Error::Metric { .. } => "statistic",
            Error::Registry(_) => "registry",
            Error::Generation(_) => "generation",
            Error::Io(_) => "io",
        }
    }
}
