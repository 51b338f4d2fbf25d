use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse grouping used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    Numeric,
    Data,
}

impl ErrorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::Config => "config",
            ErrorClass::Io => "io",
            ErrorClass::Numeric => "numeric",
            ErrorClass::Data => "data",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },
    #[error("unknown element kind `{0}`")]
    UnknownElementKind(String),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("tumor does not fit: {0}")]
    TumorDoesNotFit(String),
    #[error("no foreground voxel available for a positive window")]
    NoForeground,
    #[error("no background window available for a negative draw")]
    NoBackground,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss is not attached to the tape")]
    DetachedGraph,
    #[error("non-finite loss {value} at step {step}")]
    NonFiniteLoss { step: usize, value: f32 },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } => ErrorClass::Io,
            Error::Config(_) | Error::ConfigMismatch(_) => ErrorClass::Config,
            Error::NonFiniteLoss { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    /// Short machine-readable identifier of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::MalformedHeader(_) => "MalformedHeader",
            Error::PayloadLength { .. } => "PayloadLength",
            Error::UnknownElementKind(_) => "UnknownElementKind",
            Error::InvalidVolume(_) => "InvalidVolume",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::TumorDoesNotFit(_) => "TumorDoesNotFit",
            Error::NoForeground => "NoForeground",
            Error::NoBackground => "NoBackground",
            Error::NonScalarLoss(_) => "NonScalarLoss",
            Error::DetachedGraph => "DetachedGraph",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::Config(_) => "Config",
            Error::ConfigMismatch(_) => "ConfigMismatch",
            Error::CorruptCheckpoint(_) => "CorruptCheckpoint",
        }
    }
}
