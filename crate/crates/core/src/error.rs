use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Runtime,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Runtime => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("computation graph cycle detected at node {0}")]
    GraphCycle(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported network variant `{0}`")]
    UnsupportedVariant(String),

    #[error("bad magic in {format} file: expected {expected:?}, found {found:?}")]
    BadMagic {
        format: &'static str,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("unsupported {format} version {found} (expected {expected})")]
    UnsupportedVersion {
        format: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("truncated {0}")]
    Truncated(&'static str),

    #[error("{0} has {1} unexpected trailing bytes")]
    TrailingBytes(&'static str, usize),

    #[error("checkpoint shape mismatch at `{path}`: expected {expected:?}, found {found:?}")]
    CheckpointShape {
        path: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checkpoint is missing entry `{0}`")]
    MissingEntry(String),

    #[error("{file} line {line}: {msg}")]
    Parse {
        file: String,
        line: u64,
        msg: String,
    },

    #[error("raster source {source_name} has {expected} bands, patch declares {found}")]
    BandMismatch {
        source_name: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("data error: {0}")]
    Data(String),

    /// A quantity is undefined for the given input (e.g. AUROC with one class).
    #[error("{0}")]
    Degenerate(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Usage(_) => ErrorClass::Usage,
            Error::BadMagic { .. }
            | Error::UnsupportedVersion { .. }
            | Error::Truncated(_)
            | Error::TrailingBytes(..)
            | Error::CheckpointShape { .. }
            | Error::MissingEntry(_)
            | Error::Parse { .. }
            | Error::BandMismatch { .. }
            | Error::Data(_)
            | Error::Io(_)
            | Error::Csv(_) => ErrorClass::Data,
            Error::Context { source, .. } => source.class(),
            _ => ErrorClass::Runtime,
        }
    }

    /// Innermost error, skipping any `Context` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub trait ResultExt<T> {
    fn context<C: Into<String>>(self, context: impl FnOnce() -> C) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context<C: Into<String>>(self, context: impl FnOnce() -> C) -> Result<T> {
        self.map_err(|source| Error::Context {
            context: context().into(),
            source: Box::new(source),
        })
    }
}
