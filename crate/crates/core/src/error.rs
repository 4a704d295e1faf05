use std::path::PathBuf;

use crate::graph::Pair;

pub type Result<T, E = AcdError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum AcdError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: self-loop on node `{node}` is not allowed")]
    SelfLoop {
        path: PathBuf,
        line: usize,
        node: String,
    },

    #[error("{path}:{line}: negative edge weight {weight}")]
    NegativeWeight {
        path: PathBuf,
        line: usize,
        weight: String,
    },

    #[error("no edges in input")]
    NoEdges,

    #[error("requested {requested} anomalous pairs but only {available} non-adjacent pairs exist")]
    NoFreePairs { requested: usize, available: usize },

    #[error("pair {0} is not an edge")]
    PairAbsent(Pair),

    #[error("pair {0} is already an edge")]
    PairPresent(Pair),

    #[error("node index {index} out of range for {n_nodes} nodes")]
    NodeOutOfRange { index: usize, n_nodes: usize },

    #[error("self-pair ({0}, {0}) has no rate")]
    SelfPair(usize),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("K = {k} exceeds the number of nodes N = {n}")]
    TooManyCommunities { k: usize, n: usize },

    #[error("N = {n} exceeds the dense Q limit of {max} nodes")]
    TooManyNodes { n: usize, max: usize },

    #[error("unbounded {block} update at index ({row}, {col}): positive numerator over zero denominator")]
    UnboundedUpdate {
        block: &'static str,
        row: usize,
        col: usize,
    },

    #[error("log-posterior became non-finite at iteration {iter}")]
    NonFinite { iter: usize },

    #[error("all {n_seeds} restarts failed; last error: {last}")]
    AllSeedsFailed { n_seeds: usize, last: String },

    #[error("calibration infeasible: {0}")]
    Infeasible(String),

    #[error("{0}")]
    EmptyClass(&'static str),

    #[error("labelings cover different pair sets")]
    UniverseMismatch,

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl AcdError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AcdError::Io {
            path: path.into(),
            source,
        }
    }
}
