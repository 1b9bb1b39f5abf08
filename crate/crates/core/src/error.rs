use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("dangling node id {id} (graph has {num_nodes} nodes)")]
    DanglingNode { id: usize, num_nodes: usize },

    #[error("count mismatch: {0}")]
    CountMismatch(String),

    #[error("labels required: {0}")]
    LabelsRequired(String),

    #[error("node id {id} out of range (graph has {num_nodes} nodes)")]
    NodeOutOfRange { id: usize, num_nodes: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("not enough data: {0}")]
    Insufficient(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("trial {trial}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::DanglingNode { .. } => "dangling_node_id",
            Error::CountMismatch(_) => "count_mismatch",
            Error::LabelsRequired(_) => "labels_required",
            Error::NodeOutOfRange { .. } => "node_out_of_range",
            Error::Shape(_) => "shape_mismatch",
            Error::Config(_) => "config",
            Error::Split(_) => "split",
            Error::Insufficient(_) => "insufficient_data",
            Error::NonFinite(_) => "non_finite",
            Error::Trial { source, .. } => source.kind(),
            Error::Serde(_) => "serde",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
