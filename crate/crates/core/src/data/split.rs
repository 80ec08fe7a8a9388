use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Example, Label};

const SPLIT_STREAM: u64 = 0x5b1e;
const SUBSET_STREAM: u64 = 0x5b5e;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            validation: 0.1,
            test: 0.1,
        }
    }
}

/// Output of [`stratified_split`]: held-out sets plus the remaining pool from
/// which the labeled subset is drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPool {
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
}

impl TrainPool {
    pub fn into_splits(self, n_labeled: usize, seed: u64) -> Result<DatasetSplits, DataError> {
        let (labeled, unlabeled) = select_labeled_subset(&self.train, n_labeled, seed)?;
        Ok(DatasetSplits {
            labeled,
            unlabeled,
            validation: self.validation,
            test: self.test,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub labeled: Vec<Example>,
    /// Labels are masked.
    pub unlabeled: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Indices of each class, `[safe, harmful]`, in input order.
fn class_indices(examples: &[Example]) -> Result<[Vec<usize>; 2], DataError> {
    let mut by_class = [Vec::new(), Vec::new()];
    for (i, e) in examples.iter().enumerate() {
        let label = e
            .label
            .ok_or_else(|| DataError::Contract(format!("example {} is unlabeled", e.id)))?;
        by_class[label.index()].push(i);
    }
    Ok(by_class)
}

fn gather(examples: &[Example], mut indices: Vec<usize>) -> Vec<Example> {
    indices.sort_unstable();
    indices.into_iter().map(|i| examples[i].clone()).collect()
}

/// Carves validation and test sets with per-class counts
/// `round(n_class * fraction)`; everything else is the train pool. Each output
/// keeps the input order of its members.
pub fn stratified_split(examples: &[Example], fractions: SplitFractions, seed: u64) -> Result<TrainPool, DataError> {
    let SplitFractions { validation, test } = fractions;
    if !(0.0..=1.0).contains(&validation) || !(0.0..=1.0).contains(&test) || validation + test > 1.0 {
        return Err(DataError::Config(format!(
            "split fractions must be in [0, 1] and sum to at most 1 (got validation={validation}, test={test})"
        )));
    }
    let by_class = class_indices(examples)?;
    let mut rng = rng_for(seed, SPLIT_STREAM);
    let (mut val_idx, mut test_idx, mut train_idx) = (Vec::new(), Vec::new(), Vec::new());

    for (class, mut members) in by_class.into_iter().enumerate() {
        let n = members.len();
        let n_val = (n as f64 * validation).round() as usize;
        let n_test = (n as f64 * test).round() as usize;
        let label = Label::from_index(class).unwrap();
        if n == 0 && validation + test > 0.0 {
            return Err(DataError::Config(format!("class {label} has no examples to split")));
        }
        if n_val + n_test > n {
            return Err(DataError::Config(format!(
                "class {label} has {n} examples but the splits require {}",
                n_val + n_test
            )));
        }
        members.shuffle(&mut rng);
        val_idx.extend_from_slice(&members[..n_val]);
        test_idx.extend_from_slice(&members[n_val..n_val + n_test]);
        train_idx.extend_from_slice(&members[n_val + n_test..]);
    }

    Ok(TrainPool {
        train: gather(examples, train_idx),
        validation: gather(examples, val_idx),
        test: gather(examples, test_idx),
    })
}

/// Draws `n / 2` examples of each class uniformly without replacement. The
/// rest of the pool is returned with labels masked.
pub fn select_labeled_subset(pool: &[Example], n: usize, seed: u64) -> Result<(Vec<Example>, Vec<Example>), DataError> {
    if !n.is_multiple_of(2) {
        return Err(DataError::Config(format!("labeled subset size must be even, got {n}")));
    }
    let per_class = n / 2;
    let by_class = class_indices(pool)?;
    let mut rng = rng_for(seed, SUBSET_STREAM);
    let mut chosen = vec![false; pool.len()];

    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.len() < per_class {
            return Err(DataError::Config(format!(
                "class {} has {} examples in the pool, fewer than the {per_class} required",
                Label::from_index(class).unwrap(),
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for &i in &members[..per_class] {
            chosen[i] = true;
        }
    }

    let mut labeled = Vec::with_capacity(n);
    let mut unlabeled = Vec::with_capacity(pool.len() - n);
    for (example, picked) in pool.iter().zip(chosen) {
        if picked {
            labeled.push(example.clone());
        } else {
            unlabeled.push(example.masked());
        }
    }
    Ok((labeled, unlabeled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::class_counts;
    use std::collections::HashSet;

    fn corpus(safe: usize, harmful: usize) -> Vec<Example> {
        (0..safe)
            .map(|i| Example::prompt(format!("s{i}"), format!("safe text {i}"), Some(Label::Safe)))
            .chain(
                (0..harmful).map(|i| Example::prompt(format!("h{i}"), format!("bad text {i}"), Some(Label::Harmful))),
            )
            .collect()
    }

    fn frac(validation: f64) -> SplitFractions {
        SplitFractions { validation, test: 0.0 }
    }

    #[test]
    fn balanced_split_is_exactly_proportional() {
        let pool = stratified_split(&corpus(50, 50), frac(0.1), 7).unwrap();
        assert_eq!(class_counts(&pool.validation), [5, 5]);
        assert_eq!(pool.train.len(), 90);
    }

    #[test]
    fn skewed_split_preserves_ratio() {
        let pool = stratified_split(&corpus(700, 300), frac(0.1), 3).unwrap();
        let [s, h] = class_counts(&pool.validation);
        assert!((s as i64 - 70).abs() <= 1 && (h as i64 - 30).abs() <= 1, "{s}/{h}");
    }

    #[test]
    fn split_is_deterministic() {
        let c = corpus(40, 60);
        let f = SplitFractions {
            validation: 0.2,
            test: 0.1,
        };
        assert_eq!(
            stratified_split(&c, f, 11).unwrap(),
            stratified_split(&c, f, 11).unwrap()
        );
    }

    #[test]
    fn split_rejects_unsatisfiable_requests() {
        let err = stratified_split(&corpus(10, 0), frac(0.1), 1).unwrap_err();
        assert!(matches!(err, DataError::Config(_)));
        let err = stratified_split(
            &corpus(10, 10),
            SplitFractions {
                validation: 0.7,
                test: 0.5,
            },
            1,
        )
        .unwrap_err();
        assert!(matches!(err, DataError::Config(_)));
    }

    #[test]
    fn labeled_subset_is_balanced() {
        let (labeled, unlabeled) = select_labeled_subset(&corpus(300, 500), 200, 5).unwrap();
        assert_eq!(class_counts(&labeled), [100, 100]);
        assert_eq!(unlabeled.len(), 600);
        assert!(unlabeled.iter().all(|e| e.label.is_none()));
    }

    #[test]
    fn forced_selection_takes_whole_pool() {
        let (labeled, unlabeled) = select_labeled_subset(&corpus(1, 1), 2, 0).unwrap();
        assert_eq!(labeled.len(), 2);
        assert!(unlabeled.is_empty());
    }

    #[test]
    fn insufficient_class_is_named() {
        let err = select_labeled_subset(&corpus(10, 3), 10, 0).unwrap_err();
        match err {
            DataError::Config(msg) => assert!(msg.contains("harmful"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn distinct_seeds_give_distinct_subsets() {
        let pool = corpus(5000, 5000);
        let ids: Vec<HashSet<String>> = [1, 2, 3]
            .iter()
            .map(|&s| {
                let (labeled, _) = select_labeled_subset(&pool, 200, s).unwrap();
                assert_eq!(class_counts(&labeled), [100, 100]);
                labeled.into_iter().map(|e| e.id).collect()
            })
            .collect();
        assert_ne!(ids[0], ids[1]);
        assert_ne!(ids[1], ids[2]);
        assert_ne!(ids[0], ids[2]);
    }
}
