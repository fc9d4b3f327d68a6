use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("node index {index} out of range for {node_count} nodes")]
    IndexOutOfRange { index: usize, node_count: usize },
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("measurement graph is disconnected")]
    Disconnected,
    #[error("invalid subset: {0}")]
    InvalidSubset(String),
    #[error("subgraph induced by the participating subset is disconnected")]
    SubsetDisconnected,
    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("reduced system is ill-conditioned (condition number {0:e})")]
    IllConditioned(f64),
    #[error("channel coefficient is zero at participating node {0}")]
    ZeroChannel(usize),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("not a tree: {0}")]
    NotATree(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors caused by the physical model (graph connectivity, covariance
    /// definiteness, conditioning) as opposed to malformed input.
    pub fn is_model_error(&self) -> bool {
        matches!(
            self,
            Error::Disconnected
                | Error::SubsetDisconnected
                | Error::NotPositiveDefinite(_)
                | Error::IllConditioned(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
