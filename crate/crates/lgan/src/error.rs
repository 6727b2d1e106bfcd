//! Error type shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Unified error for data handling, network construction and training.
#[derive(Debug, Error)]
pub enum Error {
    /// A raw pixel value fell outside the declared bit range, or a mask
    /// PNG contained a value other than 0/255.
    #[error("invalid pixel value {value} at ({row}, {col}): {reason}")]
    InvalidPixel {
        row: usize,
        col: usize,
        value: i64,
        reason: String,
    },

    /// Array dimensions do not satisfy an operation's contract.
    #[error("shape error: {0}")]
    Shape(String),

    /// A network specification is internally inconsistent.
    #[error("spec error: {0}")]
    Spec(String),

    /// A critic was handed inputs that do not match its variant's wiring.
    #[error("wiring error: {0}")]
    Wiring(String),

    /// Hausdorff distance is undefined for an empty foreground.
    #[error("empty mask: {0}")]
    EmptyMask(String),

    /// The manifest file contained no entries.
    #[error("empty manifest: {}", path.display())]
    EmptyManifest { path: PathBuf },

    /// A metric report was requested over zero rows.
    #[error("empty report: no metric rows to aggregate")]
    EmptyReport,

    /// A file referenced by a manifest does not exist.
    #[error("missing file: {}", path.display())]
    MissingFile { path: PathBuf },

    /// A manifest (or config) line could not be parsed.
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A scan id was assigned to both the train and the test split.
    #[error("scan '{scan_id}' appears in both train and test splits")]
    SplitViolation { scan_id: String },

    /// Training produced a non-finite loss and was aborted.
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    /// A checkpoint file is malformed or has an unsupported version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn spec(msg: impl Into<String>) -> Self {
        Error::Spec(msg.into())
    }

    pub fn wiring(msg: impl Into<String>) -> Self {
        Error::Wiring(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
