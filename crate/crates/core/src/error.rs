use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("cohort is empty after filtering ({dropped} rows dropped)")]
    EmptyCohort { dropped: usize },

    #[error("cannot stratify: {0}")]
    Stratification(String),

    #[error("model fit failed: {0}")]
    Fit(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("row alignment error: {0}")]
    Alignment(String),

    #[error("perturbation spec error: {0}")]
    Spec(String),

    #[error("AUC undefined: {0}")]
    UndefinedAuc(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("no evaluable subgroups for attribute `{0}` (all groups below the minimum size)")]
    NoEvaluableGroups(String),

    #[error("evaluation plan error: {0}")]
    Plan(String),

    #[error("cohort too small: {n} rows, need at least {min}")]
    TooSmall { n: usize, min: usize },

    #[error("incomplete scorecard: {0}")]
    IncompleteScorecard(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("battery file: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
