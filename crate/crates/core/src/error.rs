use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coordinate: {0}")]
    Coordinate(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid parameter `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("stage `{stage}` needs artifact {path} from a previous stage: {reason}")]
    MissingArtifact {
        stage: &'static str,
        path: PathBuf,
        reason: String,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("clusterings label different point sets ({0} vs {1} points)")]
    PointSetMismatch(usize, usize),
    #[error("instance too large for brute-force oracle: {size} > {limit}")]
    OracleBound { size: usize, limit: usize },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 1 config, 2 missing predecessor artifact, 3 data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 1,
            Error::MissingArtifact { .. } => 2,
            _ => 3,
        }
    }
}
