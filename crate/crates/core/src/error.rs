use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("shape error{}: {message}", fmt_layer(*.layer))]
    Shape {
        layer: Option<usize>,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("validation error{}: {message}", fmt_layer(*.layer))]
    Validation {
        layer: Option<usize>,
        message: String,
    },

    #[error("numeric error{}: {message}", fmt_layer(*.layer))]
    Numeric {
        layer: Option<usize>,
        message: String,
    },

    #[error("{0} already exists")]
    Conflict(String),

    #[error("{0} not found")]
    NotFound(String),

    #[error("cannot resolve {0}")]
    Resolution(String),

    #[error("I/O error at {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn fmt_layer(layer: Option<usize>) -> String {
    match layer {
        Some(i) => format!(" (layer {i})"),
        None => String::new(),
    }
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(layer: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Shape {
            layer,
            message: msg.into(),
        }
    }

    pub fn validation(layer: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Validation {
            layer,
            message: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code, used by the HTTP error envelope and CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DegenerateGeometry(_) => "degenerate_geometry",
            Error::Shape { .. } => "shape",
            Error::Format(_) => "format",
            Error::Validation { .. } => "validation",
            Error::Numeric { .. } => "numeric",
            Error::Conflict(_) => "conflict",
            Error::NotFound(_) => "not_found",
            Error::Resolution(_) => "resolution",
            Error::Io { .. } => "io",
        }
    }

    /// Offending layer index, if the error is tied to one.
    pub fn layer(&self) -> Option<usize> {
        match self {
            Error::Shape { layer, .. }
            | Error::Validation { layer, .. }
            | Error::Numeric { layer, .. } => *layer,
            _ => None,
        }
    }
}
