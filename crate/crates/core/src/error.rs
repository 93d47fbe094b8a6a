use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("stage {stage} is beyond the terminal stage {terminal}")]
    StageOutOfRange { stage: usize, terminal: usize },

    #[error("action index {index} out of range for action space of size {size}")]
    ActionOutOfRange { index: usize, size: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("rank-deficient design ({rows} rows, {cols} columns); use ridge > 0")]
    RankDeficient { rows: usize, cols: usize },

    #[error("invalid regression spec: {0}")]
    Spec(String),

    #[error("empty final stage: no patient reaches stage {0}")]
    EmptyFinalStage(usize),

    #[error("stage {0} has no future stage")]
    NoFutureStage(usize),

    #[error("fit failed at stage {stage}{}: {source}", column.map(|c| format!(", column {c}")).unwrap_or_default())]
    StageFit {
        stage: usize,
        column: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("epsilon must lie in [0, 1), got {0}")]
    Epsilon(f64),

    #[error("non-finite q-value at action {0}")]
    NonFinite(usize),

    #[error("dose {0} is not on the dose grid")]
    DoseOffGrid(f64),

    #[error("{0}")]
    Config(String),

    #[error("{path}:{row}: {message}")]
    Parse { path: PathBuf, row: usize, message: String },

    #[error("model format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_stage(self, stage: usize, column: Option<usize>) -> Error {
        Error::StageFit {
            stage,
            column,
            source: Box::new(self),
        }
    }
}
