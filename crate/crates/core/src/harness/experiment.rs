use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentationCache;
use crate::data::{
    filter_examples, ingest_many, stratified_split, Example, FilterConfig, SplitFractions, Task, TrainPool,
};
use crate::ssl::{train, Algorithm, AugmentationSource, TrainConfig, TrainOptions};

use super::metrics::{evaluate, Evaluation};
use super::synth::{synth_corpus, synth_lexicon};
use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic {
        n_per_class: usize,
        seed: u64,
    },
    /// JSONL files, ingested and filtered with the default filters.
    Files {
        paths: Vec<PathBuf>,
        task: Task,
    },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Vec<Example>, HarnessError> {
        match self {
            DatasetSource::Synthetic { n_per_class, seed } => {
                if *n_per_class < 10 {
                    return Err(HarnessError::Config("synthetic n_per_class must be at least 10".into()));
                }
                Ok(synth_corpus(*n_per_class, *seed))
            }
            DatasetSource::Files { paths, task } => {
                let outcome = ingest_many(paths, *task)?;
                let (kept, report) = filter_examples(&outcome.examples, &FilterConfig::default());
                log::info!("ingested {} examples, kept {}", outcome.examples.len(), report.kept);
                Ok(kept)
            }
        }
    }
}

/// A grid of training cells: every algorithm at every labeled size with
/// every augmentation source and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub dataset: DatasetSource,
    pub algorithms: Vec<Algorithm>,
    pub labeled_sizes: Vec<usize>,
    pub augmentations: Vec<AugmentationSource>,
    pub seeds: Vec<u64>,
    /// Seed of the validation/test carve-out, shared by all cells.
    pub split_seed: u64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub cache_path: Option<PathBuf>,
    /// Checkpoints and histories go to `{output_dir}/{cell id}/` when set.
    pub output_dir: Option<PathBuf>,
    pub max_workers: usize,
    /// Base training configuration; `algorithm` and `seed` are set per cell.
    pub train: TrainConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            name: "experiment".into(),
            dataset: DatasetSource::Synthetic {
                n_per_class: 500,
                seed: 0,
            },
            algorithms: Algorithm::ALL.to_vec(),
            labeled_sizes: vec![40],
            augmentations: vec![AugmentationSource::Mock],
            seeds: vec![1, 2, 3],
            split_seed: 0,
            validation_fraction: 0.1,
            test_fraction: 0.1,
            cache_path: None,
            output_dir: None,
            max_workers: 1,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub algorithm: Algorithm,
    pub n_labeled: usize,
    pub augmentation: AugmentationSource,
    pub seed: u64,
}

impl CellKey {
    pub fn run_id(&self) -> String {
        format!(
            "{}-n{}-{}-s{}",
            self.algorithm.as_str().to_ascii_lowercase(),
            self.n_labeled,
            self.augmentation,
            self.seed
        )
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: &str| Err(HarnessError::Config(msg.into()));
        if self.seeds.is_empty() {
            return fail("seeds must not be empty");
        }
        if self.algorithms.is_empty() || self.augmentations.is_empty() || self.labeled_sizes.is_empty() {
            return fail("algorithms, labeled_sizes and augmentations must not be empty");
        }
        if self.labeled_sizes.iter().any(|&n| n == 0 || n % 2 != 0) {
            return fail("labeled sizes must be even and positive");
        }
        if self.max_workers == 0 {
            return fail("max_workers must be at least 1");
        }
        let fractions = self.validation_fraction + self.test_fraction;
        if !(self.validation_fraction > 0.0 && self.test_fraction > 0.0 && fractions < 1.0) {
            return fail("validation and test fractions must be positive and sum below 1");
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// All cells in spec order.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut cells = Vec::new();
        for &algorithm in &self.algorithms {
            for &n_labeled in &self.labeled_sizes {
                for &augmentation in &self.augmentations {
                    for &seed in &self.seeds {
                        cells.push(CellKey {
                            algorithm,
                            n_labeled,
                            augmentation,
                            seed,
                        });
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellOutcome {
    Ok {
        metrics: Evaluation,
        best_epoch: Option<usize>,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    #[serde(flatten)]
    pub key: CellKey,
    #[serde(flatten)]
    pub outcome: CellOutcome,
}

impl CellReport {
    pub fn metrics(&self) -> Option<&Evaluation> {
        match &self.outcome {
            CellOutcome::Ok { metrics, .. } => Some(metrics),
            CellOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Mean over the successful seeds of one (algorithm, size, augmentation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    pub algorithm: Algorithm,
    pub n_labeled: usize,
    pub augmentation: AugmentationSource,
    pub cells: usize,
    pub failed: usize,
    /// `None` when every cell failed.
    pub mean: Option<MeanMetrics>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cells: Vec<CellReport>,
    pub groups: Vec<GroupMean>,
}

impl MetricsReport {
    /// Builds a report from cells in any order; cells and groups come out
    /// sorted by key.
    pub fn from_cells(mut cells: Vec<CellReport>) -> Self {
        cells.sort_by_key(|c| c.key);
        let mut groups: Vec<GroupMean> = Vec::new();
        for chunk in cells.chunk_by(|a, b| {
            (a.key.algorithm, a.key.n_labeled, a.key.augmentation)
                == (b.key.algorithm, b.key.n_labeled, b.key.augmentation)
        }) {
            let ok: Vec<&Evaluation> = chunk.iter().filter_map(CellReport::metrics).collect();
            let n = ok.len() as f64;
            let mean = (!ok.is_empty()).then(|| MeanMetrics {
                f1: ok.iter().map(|m| m.f1).sum::<f64>() / n,
                precision: ok.iter().map(|m| m.precision).sum::<f64>() / n,
                recall: ok.iter().map(|m| m.recall).sum::<f64>() / n,
            });
            let key = chunk[0].key;
            groups.push(GroupMean {
                algorithm: key.algorithm,
                n_labeled: key.n_labeled,
                augmentation: key.augmentation,
                cells: chunk.len(),
                failed: chunk.len() - ok.len(),
                mean,
            });
        }
        MetricsReport { cells, groups }
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.metrics().is_none()).count()
    }
}

fn run_cell(
    spec: &ExperimentSpec,
    pool: &TrainPool,
    cache: &AugmentationCache,
    key: CellKey,
) -> Result<(Evaluation, Option<usize>), HarnessError> {
    let splits = pool.clone().into_splits(key.n_labeled, key.seed)?;
    let config = TrainConfig {
        algorithm: key.algorithm,
        seed: key.seed,
        ..spec.train.clone()
    };
    let options = TrainOptions {
        augmentation: key.augmentation,
        run_dir: spec.output_dir.clone(),
        run_id: key.run_id(),
        mock_lexicon: synth_lexicon(),
    };
    let outcome = train(&config, &splits, cache, &options)?;
    let metrics = evaluate(&outcome.params, &splits.test)?;
    Ok((metrics, outcome.best_epoch))
}

/// Runs every cell of `spec` on held-out test data. A cell that fails is
/// recorded as failed; only spec, data and cache problems abort the run.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<MetricsReport, HarnessError> {
    spec.validate()?;
    let corpus = spec.dataset.load()?;
    let fractions = SplitFractions {
        validation: spec.validation_fraction,
        test: spec.test_fraction,
    };
    let pool = stratified_split(&corpus, fractions, spec.split_seed)?;
    let cache = match &spec.cache_path {
        Some(path) => AugmentationCache::open(path)?,
        None => AugmentationCache::in_memory(),
    };
    let cells = spec.cells();
    let workers = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.max_workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let reports: Vec<CellReport> = workers.install(|| {
        cells
            .par_iter()
            .map(|&key| {
                let outcome = match run_cell(spec, &pool, &cache, key) {
                    Ok((metrics, best_epoch)) => CellOutcome::Ok { metrics, best_epoch },
                    Err(e) => {
                        log::warn!("cell {} failed: {e}", key.run_id());
                        CellOutcome::Failed { error: e.to_string() }
                    }
                };
                CellReport { key, outcome }
            })
            .collect()
    });
    Ok(MetricsReport::from_cells(reports))
}
