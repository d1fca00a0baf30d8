use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node index {index} out of range for graph with {num_nodes} nodes")]
    IndexOutOfRange { index: usize, num_nodes: usize },

    #[error("self-loop ({0}, {0}) rejected in raw adjacency")]
    SelfLoopRejected(usize),

    #[error("node {0} has no neighbors; enable self-loops to normalize")]
    IsolatedNode(usize),

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("permutation is not a bijection on 0..{0}")]
    NotABijection(usize),

    #[error("{op}: expected binary input, found {value}")]
    NonBinaryInput { op: &'static str, value: f32 },

    #[error("dropout rate {0} outside [0, 1)")]
    InvalidRate(f32),

    #[error("{what}: value {value} outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("rank-order penalty {0} outside (0, 1)")]
    InvalidPenalty(f32),

    #[error("graph readout on a graph with no nodes")]
    EmptyGraph,

    #[error("empty node mask")]
    EmptyMask,

    #[error("non-finite loss {loss} at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, loss: f32 },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("{file}:{line}: {msg}")]
    SchemaViolation {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("label {label} of node {node} not below class count {num_classes}")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("class {class} has {available} nodes, {required} required")]
    InsufficientNodes {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("format version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn schema(file: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::SchemaViolation {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }
}
