use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{context}: expected shape {expected:?}, found {found:?}")]
    Dimension {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("node {node} out of range for a graph with {num_nodes} nodes")]
    NodeOutOfRange { node: usize, num_nodes: usize },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}: node set must not be empty")]
    EmptyNodeSet(&'static str),
    #[error("labeled and pseudo-labeled node sets overlap at node {0}")]
    OverlappingSets(usize),
    #[error("matrix is numerically singular (condition estimate {condition:e})")]
    Singular { condition: f64 },
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
