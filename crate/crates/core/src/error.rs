use std::path::PathBuf;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest at line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error("malformed blob {path}: {msg}")]
    Blob { path: PathBuf, msg: String },

    #[error("dimension mismatch for view `{view}`: expected {expected}, found {found}")]
    DimensionMismatch {
        view: String,
        expected: usize,
        found: usize,
    },

    #[error("duplicate instance_id: {}", join_ids(.0))]
    DuplicateInstanceId(Vec<u64>),

    #[error("dataset failed validation with {} violation(s)", .0.len())]
    Invalid(Vec<Violation>),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("missing view `{view}` on instance {instance_id}")]
    MissingView { view: String, instance_id: u64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero variance")]
    ZeroVariance,

    #[error("empty labeled set")]
    EmptyLabeledSet,

    #[error("cannot select {k} items from a pool of {pool}")]
    PoolTooSmall { k: usize, pool: usize },

    #[error("instance {0} lacks a field required by the strategy: {1}")]
    MissingField(u64, &'static str),

    #[error("budget target {target} is below the current charge {current}")]
    BudgetBelowCurrent { target: usize, current: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn join_ids(ids: &[u64]) -> String {
    ids.iter()
        .map(u64::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
