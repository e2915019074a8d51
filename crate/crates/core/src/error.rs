use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({lat}, {lon}) lies outside the grid bounds")]
    OutOfBounds { lat: f64, lon: f64 },

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training labels contain a single class: {0}")]
    DegenerateLabels(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// True for errors caused by bad configuration rather than bad data.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
