use thiserror::Error;

use crate::events::EventError;
use crate::fitting::FitError;
use crate::fpca::FpcaError;
use crate::ingest::IngestError;
use crate::models::ModelError;
use crate::stats::StatsError;

/// Any failure of a pipeline stage.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Fpca(#[from] FpcaError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {message}")]
    Format { context: String, message: String },
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    pub fn format(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Format { context: context.into(), message: message.to_string() }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// Short machine-readable kind, used in CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Ingest(_) => "ingest",
            Error::Event(_) => "events",
            Error::Model(_) => "model",
            Error::Fit(_) => "fit",
            Error::Fpca(FpcaError::TooFewCurves(_)) => "too_few_curves",
            Error::Fpca(FpcaError::GridMismatch { .. }) => "grid_mismatch",
            Error::Fpca(_) => "fpca",
            Error::Stats(_) => "stats",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::MissingInput(_) => "missing_input",
            Error::Stage { source, .. } => source.kind(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
