use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid experiment: {0}")]
    Config(String),

    #[error("{failed} of {total} runs failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("filter {label}: {source}")]
    FilterRun {
        label: String,
        #[source]
        source: mmfilter::Error,
    },

    #[error(transparent)]
    Filter(#[from] mmfilter::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl BenchError {
    /// Process exit code: 1 for configuration problems, 2 for run failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::TooManyFailures { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
