use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::losses::FilterCounts;
use super::TrainError;

/// One line of the training history file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_s: f64,
    pub l_u: f64,
    pub lambda_u: f64,
    pub total: f64,
    pub head_l_u: Vec<f64>,
    pub filters: Vec<FilterCounts>,
    /// Fraction of the unlabeled split that received nonzero weight in any
    /// head during the epoch.
    pub unlabeled_usage: f64,
    pub tau_t: Vec<[f64; 2]>,
    /// APM thresholds after the epoch; `null` while still at `-inf`.
    pub gamma: Vec<[Option<f64>; 2]>,
    pub val_f1: f64,
    pub val_precision: f64,
    pub val_recall: f64,
}

impl EpochRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("history record serializes")
    }
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>, TrainError> {
    let text = fs::read_to_string(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| TrainError::Config(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
