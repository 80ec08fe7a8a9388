//! Supervised, FixMatch, MarginMatch and MultiMatch training.
//!
//! The pieces compose bottom-up: [`pseudo_label`] turns weak-view
//! probabilities into decisions, the APM tracker and [`ThresholdState`]
//! decide which decisions are trusted, the loss functions weigh them, and
//! [`Trainer`] runs the epochs.

mod apm;
mod config;
mod history;
mod losses;
mod threshold;
mod trainer;

use std::path::PathBuf;

use thiserror::Error;

use crate::augment::AugmentError;
use crate::data::DataError;
use crate::model::ModelError;

pub use apm::{apm_reference_average, compute_gamma, percentile, pseudo_margin, replay_recurrence, APMTracker, ApmKey};
pub use config::{Algorithm, TrainConfig};
pub use history::{read_history, EpochRecord};
pub use losses::{
    decide, fixmatch_unlabeled_loss, marginmatch_mask, masked_unlabeled_loss, multimatch_unlabeled_loss,
    multimatch_weight, plwm_assign, pseudo_label, supervised_loss, supervised_loss_features, total_loss, FilterCounts,
    HeadTerms, HeadVote, LossBreakdown, PseudoLabelDecision,
};
pub use threshold::{freematch_threshold_update, AdaptiveThreshold, ThresholdState};
pub use trainer::{
    objective, train, AugmentationSource, Objective, TrainOptions, TrainOutcome, Trainer, UnlabeledBatch, UnlabeledTerm,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
