use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("window exceeds input: window {window} > padded extent {extent}")]
    WindowExceedsInput { window: usize, extent: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("geometry inconsistency between `{from}` and `{to}`: {detail}")]
    Geometry {
        from: String,
        to: String,
        detail: String,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("degenerate signal in module `{module}`: standard deviation is zero")]
    DegenerateSignal { module: String },

    #[error("unimplemented: {0}")]
    Unimplemented(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
