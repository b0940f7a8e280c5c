//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// File could not be opened or read at all.
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// WAV container is present but the encoding is not integer/float PCM.
    #[error("{path}: not a PCM WAV file ({detail})")]
    NonPcm { path: PathBuf, detail: String },

    /// WAV header declares more sample data than the file contains.
    #[error("{path}: truncated data chunk")]
    TruncatedData { path: PathBuf },

    /// Malformed WAV container (bad RIFF structure, bad header fields).
    #[error("{path}: malformed WAV ({detail})")]
    MalformedWav { path: PathBuf, detail: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Buffer sample rate does not match the rate a consumer expects.
    #[error("sample rate mismatch: buffer is {actual} Hz, expected {expected} Hz")]
    RateMismatch { expected: u32, actual: u32 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unknown class {0:?}")]
    UnknownClass(String),

    #[error("event [{onset}, {offset}] outside clip of duration {duration}")]
    EventOutsideClip {
        onset: f64,
        offset: f64,
        duration: f64,
    },

    #[error("{path}: bad annotation line {line}: {detail}")]
    BadAnnotation {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    /// Checkpoint or feature-cache file does not follow its binary format.
    #[error("{path}: bad file format ({detail})")]
    BadFileFormat { path: PathBuf, detail: String },

    /// Checkpoint architecture does not match the requested profile.
    #[error("checkpoint/profile mismatch: {0}")]
    ProfileMismatch(String),

    /// Reference/estimate directories do not pair up file-for-file.
    #[error("unmatched annotation files: {0:?}")]
    UnmatchedFiles(Vec<String>),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
