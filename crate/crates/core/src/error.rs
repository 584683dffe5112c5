use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}")]
    Parse {
        what: String,
        #[source]
        source: serde_json::Error,
    },

    /// A record failed validation; `record` names the offending id.
    #[error("invalid {record}: {reason}")]
    Validation { record: String, reason: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate crop: {0}")]
    DegenerateCrop(String),

    #[error("missing classifier output for annotation ids {0:?}")]
    MissingOutputs(Vec<u64>),

    #[error("stage {requested} cannot follow {previous}")]
    StageOrder { requested: String, previous: String },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn validation(record: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            record: record.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
