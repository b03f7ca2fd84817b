use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-consecutive time index: expected t={expected}, found t={found}")]
    NonConsecutiveTime { expected: i64, found: i64 },

    #[error("column `{column}` is flagged binary but holds {value} at t={t}")]
    NonBinary { column: String, t: usize, value: f64 },

    #[error("width mismatch: {0}")]
    WidthMismatch(String),

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("invalid DAG configuration: {0}")]
    InvalidDag(String),

    #[error("t={t} lies in the burn-in window (max lag {max_lag})")]
    BurnIn { t: usize, max_lag: usize },

    #[error("missing value for {what} at t={t}")]
    MissingValue { what: String, t: usize },

    #[error("time {t} outside the available range {start}..={end}")]
    OutOfRange { t: i64, start: usize, end: usize },

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no admissible candidates: {0}")]
    NoCandidates(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Degenerate(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
