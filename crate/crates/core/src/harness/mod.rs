//! Metrics, synthetic corpora, multi-seed experiments and reports.

mod experiment;
pub mod metrics;
mod report;
mod synth;

use std::path::PathBuf;

use thiserror::Error;

use crate::augment::AugmentError;
use crate::data::DataError;
use crate::model::ModelError;
use crate::ssl::TrainError;

pub use experiment::{
    run_experiment, CellKey, CellOutcome, CellReport, DatasetSource, ExperimentSpec, GroupMean, MeanMetrics,
    MetricsReport,
};
pub use metrics::{evaluate, f1_harmful, ConfusionMatrix, Evaluation};
pub use report::{
    render, render_csv, render_history_csv, render_json, report_render, to_fixed_json, ReportFormat, CSV_HEADER,
};
pub use synth::{synth_corpus, synth_lexicon, vocabulary_overlap};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
