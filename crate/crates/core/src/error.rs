use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range for {len} records")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("record {path} is corrupt: expected {expected} bytes, found {found}")]
    Corrupt {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("recomposition left an imaginary residue of {residue} (limit {limit})")]
    ImaginaryResidue { residue: f64, limit: f64 },

    #[error("no anchor in the batch has both a positive and a negative")]
    NoValidAnchor,

    #[error("ground-truth domain {domain} has no training sample of class {class}")]
    MissingPairing { domain: u32, class: usize },

    #[error("class count mismatch: {0}")]
    ClassMismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unknown ablation suite `{0}`")]
    UnknownSuite(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Attaches a path to I/O errors.
pub trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
