use serde::{Deserialize, Serialize};

use crate::model::{Probs, NUM_CLASSES};

const UNIFORM: f64 = 1.0 / NUM_CLASSES as f64;

/// Self-adaptive confidence threshold of one head: a global EMA of the mean
/// max-confidence scaled per class by the EMA of the mean predicted
/// distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveThreshold {
    pub tau_global: f64,
    pub class_probs_ema: [f64; NUM_CLASSES],
    pub tau_t: [f64; NUM_CLASSES],
}

impl Default for AdaptiveThreshold {
    fn default() -> Self {
        AdaptiveThreshold {
            tau_global: UNIFORM,
            class_probs_ema: [UNIFORM; NUM_CLASSES],
            tau_t: [UNIFORM; NUM_CLASSES],
        }
    }
}

impl AdaptiveThreshold {
    /// One EMA step over a batch of weak-view distributions. An empty batch
    /// leaves the state untouched.
    pub fn update(&mut self, batch: &[Probs], momentum: f64) {
        assert!(momentum > 0.0 && momentum < 1.0, "momentum must lie in (0, 1)");
        if batch.is_empty() {
            return;
        }
        let n = batch.len() as f64;
        let mean_conf = batch.iter().map(|p| p.iter().copied().fold(0.0, f64::max)).sum::<f64>() / n;
        let mut mean_dist = [0.0; NUM_CLASSES];
        for p in batch {
            for (acc, v) in mean_dist.iter_mut().zip(p) {
                *acc += v;
            }
        }
        self.tau_global = momentum * self.tau_global + (1.0 - momentum) * mean_conf;
        for (ema, m) in self.class_probs_ema.iter_mut().zip(mean_dist) {
            *ema = momentum * *ema + (1.0 - momentum) * (m / n);
        }
        let peak = self.class_probs_ema.iter().copied().fold(0.0, f64::max);
        for (t, ema) in self.tau_t.iter_mut().zip(self.class_probs_ema) {
            // Floored at 1/K: no max-confidence can fall below it, so the
            // floor never changes a mask.
            *t = (self.tau_global * ema / peak).max(UNIFORM);
        }
    }
}

/// All per-head threshold state: adaptive confidence thresholds and the
/// per-class APM percentile thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdState {
    pub heads: Vec<AdaptiveThreshold>,
    /// `gamma[head][class]`; `-inf` until the head has agreed examples.
    pub gamma: Vec<[f64; NUM_CLASSES]>,
}

impl ThresholdState {
    pub fn new(head_count: usize) -> Self {
        ThresholdState {
            heads: vec![AdaptiveThreshold::default(); head_count],
            gamma: vec![[f64::NEG_INFINITY; NUM_CLASSES]; head_count],
        }
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn tau_t(&self, head: usize) -> [f64; NUM_CLASSES] {
        self.heads[head].tau_t
    }
}

pub fn freematch_threshold_update(state: &mut ThresholdState, head: usize, batch: &[Probs], momentum: f64) {
    state.heads[head].update(batch, momentum);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn initial_thresholds_are_uniform() {
        let s = ThresholdState::new(3);
        for h in 0..3 {
            assert_eq!(s.tau_t(h), [0.5, 0.5]);
            assert_eq!(s.gamma[h], [f64::NEG_INFINITY; 2]);
        }
    }

    #[test]
    fn confident_balanced_batches_drive_thresholds_to_one() {
        let mut t = AdaptiveThreshold::default();
        let batch = [[1.0, 0.0], [0.0, 1.0]];
        let m: f64 = 0.9;
        for _ in 0..400 {
            t.update(&batch, m);
        }
        // tau_global = 1 - 0.5 * m^n
        assert_abs_diff_eq!(t.tau_global, 1.0 - 0.5 * m.powi(400), epsilon = 1e-12);
        assert_abs_diff_eq!(t.tau_t[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.tau_t[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn skewed_batch_lowers_minority_threshold() {
        let mut t = AdaptiveThreshold::default();
        t.update(&[[1.0, 0.0], [1.0, 0.0]], 0.5);
        // tau_global = 0.25 + 0.5 = 0.75; ema = [0.75, 0.25]
        assert_abs_diff_eq!(t.tau_global, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(t.tau_t[0], 0.75, epsilon = 1e-15);
        // 0.75 * 0.25 / 0.75 = 0.25, floored to 1/K
        assert_eq!(t.tau_t[1], 0.5);
        assert!(t.tau_t[1] < t.tau_t[0]);
    }

    #[test]
    fn empty_batch_is_a_no_op() {
        let mut t = AdaptiveThreshold::default();
        t.update(&[], 0.9);
        assert_eq!(t, AdaptiveThreshold::default());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tau_t_stays_in_range(
                ps in prop::collection::vec(0.0f64..=1.0, 1..40),
                m in 0.01f64..0.99,
                rounds in 1usize..20,
            ) {
                let batch: Vec<Probs> = ps.iter().map(|&p| [p, 1.0 - p]).collect();
                let mut t = AdaptiveThreshold::default();
                for _ in 0..rounds {
                    t.update(&batch, m);
                    for v in t.tau_t {
                        prop_assert!((0.5..1.0).contains(&v) || v == 1.0 && t.tau_global >= 1.0 - 1e-12);
                    }
                }
            }
        }
    }
}
