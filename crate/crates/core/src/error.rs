//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("cannot parse `{value}` in column `{column}` (record {record})")]
    Parse {
        column: String,
        value: String,
        record: usize,
    },

    #[error("indicator column `{column}` must be \"0\" or \"1\", got `{value}` (record {record})")]
    NonBinaryIndicator {
        column: String,
        value: String,
        record: usize,
    },

    #[error("duplicate observation for unit `{unit}` at time {time}")]
    DuplicateObservation { unit: String, time: i64 },

    #[error("group membership varies over time for unit `{unit}` (indicator {indicator})")]
    VaryingMembership { unit: String, indicator: &'static str },

    #[error("unit `{unit}` is flagged as both target (g=1) and interference (i=1)")]
    OverlappingGroups { unit: String },

    #[error("empty cell: {0}")]
    EmptyCell(String),

    #[error("selector matched no observations")]
    EmptySubset,

    #[error("{0} window selects no observations")]
    EmptyWindow(&'static str),

    #[error("no unit observed in both the pre and post windows")]
    NoCompleteUnits,

    #[error("expected exactly two periods, found {0}")]
    NotTwoPeriod(usize),

    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("need at least 2 clusters, found {0}")]
    TooFewClusters(usize),

    #[error("logit did not identify: perfect separation (coefficient norm {norm:.1})")]
    Separation { norm: f64 },

    #[error("response must be binary with both classes present")]
    NonBinaryResponse,

    #[error("unknown coefficient `{0}`")]
    UnknownCoefficient(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("covariance sub-block is numerically singular (condition > {0:.1e})")]
    SingularVcov(f64),

    #[error("cell {cell} has {n} units, need at least {min}")]
    TooFewUnits { cell: String, n: usize, min: usize },

    #[error("extreme weight: one unit carries {share:.4} of the total (cap {cap}); overlap likely fails")]
    ExtremeWeight { share: f64, cap: f64 },

    #[error("bootstrap: {failed}/{total} replicates failed (limit 10%)")]
    BootstrapFailures { failed: usize, total: usize },

    #[error("study cell `{cell}`: {failed}/{total} iterations failed (limit 5%)")]
    StudyCellFailures {
        cell: String,
        failed: usize,
        total: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors raised while reading or validating inputs (shape,
    /// windows, mapping), as opposed to failures inside an estimator.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::Csv(_)
                | Error::MissingColumn(_)
                | Error::Parse { .. }
                | Error::NonBinaryIndicator { .. }
                | Error::DuplicateObservation { .. }
                | Error::VaryingMembership { .. }
                | Error::OverlappingGroups { .. }
                | Error::InvalidConfig(_)
                | Error::Json(_)
                | Error::UnknownColumn(_)
                | Error::EmptySubset
                | Error::EmptyWindow(_)
                | Error::NoCompleteUnits
                | Error::NotTwoPeriod(_)
        )
    }
}
