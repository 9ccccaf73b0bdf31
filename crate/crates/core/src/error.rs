use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("{path}: wrong magic number {found} (expected {expected})")]
    WrongMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated payload ({needed} bytes needed, {available} available)")]
    Truncated {
        path: PathBuf,
        needed: usize,
        available: usize,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: unsupported image dimensions {rows}x{cols}")]
    Dimensions {
        path: PathBuf,
        rows: usize,
        cols: usize,
    },

    #[error("label {label} at index {index} is out of range")]
    LabelOutOfRange { index: usize, label: u32 },

    #[error("label {0} has no entry in the class map")]
    UnmappedLabel(u32),

    #[error("class {class} has {available} samples, {requested} requested")]
    StarvedClass {
        class: u8,
        available: usize,
        requested: usize,
    },

    #[error("pseudo-label quota not met after {attempts} attempts; starved classes: {starved:?}")]
    QuotaUnreachable { attempts: usize, starved: Vec<u8> },

    #[error("langevin sampling collected no snapshots ({steps} steps, n_demix {n_demix}, last accuracy {accuracy:.4})")]
    NoSnapshots {
        steps: usize,
        n_demix: usize,
        accuracy: f64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
