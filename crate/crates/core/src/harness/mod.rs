//! Experiment orchestration: configuration, the continual-learning pipeline,
//! metrics, the offline subspace probe, report files and the command line.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod metrics;
pub mod probe;
pub mod report;

use std::path::PathBuf;

use thiserror::Error;

use crate::backbone::BackboneError;
use crate::classifiers::ClassifierError;
use crate::data::DataError;
use crate::ensemble::EnsembleError;
use crate::gauss_store::GaussError;
use crate::numeric::NumericError;
use crate::peft::PeftError;

pub use config::{EnsembleConfig, EnsembleMode, ExperimentConfig, ScoreKind, StreamConfig, SweepConfig};
pub use experiment::{
    build_stream, run_experiment, run_on_stream, run_pipeline, ExpertiseTable, PipelineOptions, PipelineOutcome,
    RunReport, TrainedState,
};
pub use metrics::{accuracy, compute_metrics, mean_std, Metrics};
pub use probe::{subspace_probe, ProbeTable};
pub use report::{emit_report, read_report, ReportFiles, StoredReport};

/// A failure inside one of the library modules.
#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Peft(#[from] PeftError),
    #[error(transparent)]
    Gauss(#[from] GaussError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: StageError,
    },
    #[error("{path}: malformed report: {reason}")]
    Report { path: PathBuf, reason: String },
    #[error("{0} already exists (pass --force to replace it)")]
    OutputExists(PathBuf),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }
}

/// Attaches the name of the pipeline stage to a module error.
pub(crate) trait AtStage<T> {
    fn at(self, stage: impl FnOnce() -> String) -> Result<T, HarnessError>;
}

impl<T, E: Into<StageError>> AtStage<T> for Result<T, E> {
    fn at(self, stage: impl FnOnce() -> String) -> Result<T, HarnessError> {
        self.map_err(|e| HarnessError::Stage {
            stage: stage(),
            source: e.into(),
        })
    }
}
