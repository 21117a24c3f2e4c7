use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, KcotError>;

#[derive(Debug, Error)]
pub enum KcotError {
    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },

    #[error("row {row} is fully masked")]
    FullyMaskedRow { row: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cluster {cluster} is empty (responsibility mass {mass:e})")]
    EmptyCluster { cluster: usize, mass: f64 },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("node id {0} out of range")]
    InvalidNode(usize),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("underdetermined fit: {0}")]
    Underdetermined(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("remote generator returned status {status}: {body}")]
    RemoteStatus { status: u16, body: String },

    #[error("remote transport failure: {0}")]
    Transport(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl KcotError {
    pub(crate) fn dims(op: &'static str, detail: impl Into<String>) -> Self {
        KcotError::DimensionMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KcotError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        KcotError::Json {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            KcotError::DimensionMismatch { .. } => "dimension_mismatch",
            KcotError::FullyMaskedRow { .. } => "fully_masked_row",
            KcotError::InvalidParameter(_) => "invalid_parameter",
            KcotError::EmptyCluster { .. } => "empty_cluster",
            KcotError::InvalidGraph(_) => "invalid_graph",
            KcotError::Parse { .. } => "parse",
            KcotError::InvalidNode(_) => "invalid_node",
            KcotError::Insufficient(_) => "insufficient",
            KcotError::Underdetermined(_) => "underdetermined",
            KcotError::NonFinite(_) => "non_finite",
            KcotError::Config(_) => "config",
            KcotError::RemoteStatus { .. } => "remote_status",
            KcotError::Transport(_) => "transport",
            KcotError::Io { .. } => "io",
            KcotError::Json { .. } => "json",
        }
    }
}
