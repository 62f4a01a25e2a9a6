use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure category, used by front ends to pick exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid bounding box ({x1}, {y1}, {x2}, {y2}): need x1 < x2 and y1 < y2")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("iou {0} outside the supported range [0.5, 1]")]
    IouDomain(f64),

    #[error("sampling exhausted after {attempts} attempts: {what}")]
    SamplingExhausted { what: String, attempts: usize },

    #[error("degenerate latent code: norm {norm:e} is at or below {eps:e}")]
    DegenerateLatent { norm: f64, eps: f64 },

    #[error("non-finite gradient at parameter index {index}")]
    NonFiniteGradient { index: usize },

    #[error("non-finite loss {value} while {context}")]
    NonFiniteLoss { value: f64, context: String },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("report format error: {0}")]
    Report(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::IouDomain(_) | Error::InvalidBox { .. } => ErrorKind::Config,
            Error::Shape { .. }
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::Report(_)
            | Error::SamplingExhausted { .. } => ErrorKind::Data,
            Error::DegenerateLatent { .. }
            | Error::NonFiniteGradient { .. }
            | Error::NonFiniteLoss { .. } => ErrorKind::Numerical,
        }
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl ToString,
        got: impl ToString,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
