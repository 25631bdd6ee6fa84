use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed file {path}: line {line}: {reason}")]
    MalformedFile { path: PathBuf, line: usize, reason: String },
    #[error("non-finite joint coordinate at frame {t}, person {n}, joint {j}")]
    NonFiniteJoint { t: usize, n: usize, j: usize },
    #[error("sequence has no frames")]
    EmptySequence,
    #[error("{what} index {index} outside [1, {max}]")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        max: usize,
    },
    #[error("point set is empty")]
    EmptySet,
    #[error("loss must be a scalar, got shape {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("non-finite value produced by {0}")]
    NaNDetected(&'static str),
    #[error("need more than {k} points for a {k}-neighbor graph, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    /// True for failures caused by the filesystem rather than by bad input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
