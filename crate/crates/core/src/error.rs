use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset is empty after filtering")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("column {0} cannot be encoded: {1}")]
    Encoding(String, String),

    #[error("row {0} has no learned embedding (unseen at training time)")]
    UnseenRow(String),

    #[error("row {0} is observed with every column; no negatives can be drawn")]
    DegenerateRow(String),

    #[error("average precision is undefined without a positive")]
    UndefinedAp,

    #[error("{0} does not support attention traces")]
    UnsupportedExplain(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
