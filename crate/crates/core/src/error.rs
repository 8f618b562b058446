use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the calibration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("weights must be positive and finite, got {0}")]
    InvalidWeight(f64),

    #[error("non-finite value {0}")]
    NonFinite(f64),

    #[error("probability must lie in [0, 1], got {0}")]
    InvalidProbability(f64),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("slide {slide_id:?} has {tiles} tiles, at least {needed} required")]
    TooFewTiles {
        slide_id: String,
        tiles: usize,
        needed: usize,
    },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("ensemble has {models} models but {maps} maps")]
    EnsembleMismatch { models: usize, maps: usize },

    #[error("no positive samples")]
    NoPositives,

    #[error("no negative samples")]
    NoNegatives,

    #[error("no calibration samples")]
    NoSamples,

    #[error("calibration prevalence is not given and the calibration set is not fully labeled")]
    MissingPrevalence,

    #[error("target level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),

    #[error("duplicate slide id {0:?}")]
    DuplicateSlideId(String),

    #[error("infeasible sampling plan: {0}")]
    InfeasiblePlan(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Process exit code: 2 configuration error, 3 data error, 4 numerical degeneracy.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidSpec(_)
            | Error::InfeasiblePlan(_)
            | Error::Config(_)
            | Error::InvalidLevel(_)
            | Error::InvalidProbability(_)
            | Error::InvalidModel(_)
            | Error::EnsembleMismatch { .. } => 2,
            Error::DegenerateDistribution(_) | Error::InvalidWeight(_) | Error::NonFinite(_) => 4,
            Error::LengthMismatch { .. }
            | Error::TooFewTiles { .. }
            | Error::DegenerateLabels(_)
            | Error::NoPositives
            | Error::NoNegatives
            | Error::NoSamples
            | Error::MissingPrevalence
            | Error::DuplicateSlideId(_)
            | Error::Io { .. }
            | Error::Json { .. }
            | Error::Csv(_) => 3,
        }
    }
}
