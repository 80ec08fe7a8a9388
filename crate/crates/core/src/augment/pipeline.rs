use rayon::prelude::*;
use serde::Serialize;

use super::{AugmentError, AugmentationCache, Augmenter, CacheKey};
use crate::data::{build_model_input, Example};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationFailure {
    pub example_id: String,
    pub generator: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GenerationReport {
    pub generated: usize,
    pub cached: usize,
    pub failed: usize,
    /// Generated records whose text equals the model input.
    pub degenerate: usize,
    pub failures: Vec<GenerationFailure>,
}

/// Produces one record per (example, generator) pair missing from `cache`.
///
/// Up to `max_in_flight` generations run at once. Failures are collected in
/// the report and never abort the batch. Records are written and the report
/// assembled in example-id order, so reruns are idempotent and the output
/// does not depend on scheduling.
pub fn generate_corpus_augmentations(
    split: &[Example],
    plan: &[Box<dyn Augmenter>],
    cache: &mut AugmentationCache,
    max_in_flight: usize,
) -> Result<GenerationReport, AugmentError> {
    let mut examples: Vec<&Example> = split.iter().collect();
    examples.sort_by(|a, b| a.id.cmp(&b.id));

    let mut report = GenerationReport::default();
    let mut jobs = Vec::new();
    for example in &examples {
        for (slot, augmenter) in plan.iter().enumerate() {
            let key = CacheKey {
                example_id: example.id.clone(),
                kind: augmenter.kind(),
                generator: augmenter.generator(),
            };
            if cache.contains(&key) {
                report.cached += 1;
            } else {
                jobs.push((*example, slot));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .map_err(|e| AugmentError::Config(format!("cannot build worker pool: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .map(|(example, slot)| plan[*slot].augment(example))
            .collect()
    });

    for ((example, slot), result) in jobs.iter().zip(results) {
        match result {
            Ok(record) => {
                if build_model_input(example).is_ok_and(|input| input == record.text) {
                    report.degenerate += 1;
                }
                cache.put(record)?;
                report.generated += 1;
            }
            Err(e) => {
                report.failed += 1;
                report.failures.push(GenerationFailure {
                    example_id: example.id.clone(),
                    generator: plan[*slot].generator(),
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(report)
}
