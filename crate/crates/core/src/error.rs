use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("variance mask with min_variance={0} keeps no columns")]
    DegenerateMask(f64),

    #[error("unknown family {name:?}; available families: {}", available.join(", "))]
    UnknownFamily { name: String, available: Vec<String> },

    #[error("need at least two families, found {0}")]
    TooFewFamilies(usize),

    #[error("could not place {clusters} centroids {separation} apart in {dim} dimensions")]
    CentroidPlacement {
        clusters: usize,
        dim: usize,
        separation: f64,
    },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("unsupported model format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupted model container: {0}")]
    Corrupted(String),

    #[error("family model was built from network {expected}, but the supplied network hashes to {actual}")]
    HashMismatch { expected: String, actual: String },

    #[error("scenario {family}: {source}")]
    Scenario {
        family: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
