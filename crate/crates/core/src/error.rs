use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-rigid pose: {0}")]
    NonRigidPose(String),

    #[error("inconsistent camera count: frame {frame} has {found} cameras, expected {expected}")]
    InconsistentCameraCount {
        frame: usize,
        expected: usize,
        found: usize,
    },

    #[error("invalid depth {0} (must be finite and > 0)")]
    InvalidDepth(f64),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("grid spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("bad magic in {what}: expected {expected:?}, found {found:?}")]
    BadMagic {
        what: &'static str,
        expected: Vec<u8>,
        found: Vec<u8>,
    },

    #[error("unsupported {what} version {found} (supported: {supported})")]
    UnsupportedVersion {
        what: &'static str,
        found: u32,
        supported: u32,
    },

    #[error("truncated {what}: expected {expected} bytes, found {found}")]
    Truncated {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{path}{}: {source}", frame.map(|f| format!(" (frame {f})")).unwrap_or_default())]
    Io {
        path: PathBuf,
        frame: Option<usize>,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            frame: None,
            source,
        }
    }

    /// Attach a frame index to I/O errors that do not carry one yet.
    pub fn in_frame(self, frame: usize) -> Self {
        match self {
            Error::Io {
                path,
                frame: None,
                source,
            } => Error::Io {
                path,
                frame: Some(frame),
                source,
            },
            other => other,
        }
    }

    /// Process exit code for the CLI: 1 validation, 2 I/O, 3 internal invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Invariant(_) => 3,
            _ => 1,
        }
    }
}
