use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("graph validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("empty edge set")]
    EmptyEdgeSet,

    #[error("node {0} has no label")]
    UnlabeledNode(usize),

    #[error("unknown relation id {0}")]
    UnknownRelation(usize),

    #[error("unknown community id {0}")]
    UnknownCommunity(usize),

    #[error("empty soft cluster {0} (prototype collapse)")]
    EmptySoftCluster(usize),

    #[error("support violation: p[{row}][{col}] > 0 but q is zero")]
    SupportViolation { row: usize, col: usize },

    #[error("prototypes are not initialized")]
    UninitializedPrototypes,

    #[error("non-finite value in {term} at epoch {epoch}")]
    NonFinite { term: String, epoch: usize },

    #[error("training aborted: {0}")]
    TrainingAborted(String),

    #[error("infeasible target homophily {target}: achievable range [{min:.3}, {max:.3}]")]
    InfeasibleHomophily { target: f64, min: f64, max: f64 },

    #[error("malformed file {}: {detail}", path.display())]
    Malformed { path: PathBuf, detail: String },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// True for errors that indicate bad input data rather than a training failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Shape { .. }
                | Error::InvalidArgument(_)
                | Error::Validation(_)
                | Error::EmptyEdgeSet
                | Error::UnlabeledNode(_)
                | Error::UnknownRelation(_)
                | Error::UnknownCommunity(_)
                | Error::InfeasibleHomophily { .. }
                | Error::Malformed { .. }
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}
