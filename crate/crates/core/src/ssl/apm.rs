use std::collections::HashMap;

use crate::model::{Logits, NUM_CLASSES};

use super::TrainError;

/// Logit of class `c` minus the largest other logit.
pub fn pseudo_margin(z: &Logits, c: usize) -> f64 {
    let other =
        z.0.iter()
            .enumerate()
            .filter(|&(i, _)| i != c)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
    z.0[c] - other
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ApmKey {
    pub example: String,
    pub head: usize,
    pub class: usize,
}

impl ApmKey {
    pub fn new(example: impl Into<String>, head: usize, class: usize) -> Self {
        ApmKey {
            example: example.into(),
            head,
            class,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    value: f64,
    last_t: u64,
}

/// Running average pseudo-margins, keyed by example, head and class.
///
/// Each key carries its own step counter `t`; a value is
/// `pm * delta/(t+1) + previous * (1 - delta/(t+1))` starting from zero. In
/// oracle mode every PM is also kept so the running value can be replayed.
#[derive(Debug, Clone)]
pub struct APMTracker {
    delta: f64,
    epoch: u64,
    entries: HashMap<ApmKey, Entry>,
    history: Option<HashMap<ApmKey, Vec<f64>>>,
}

impl APMTracker {
    pub fn new(delta: f64) -> Result<Self, TrainError> {
        if !(delta > 0.0 && delta <= 2.0) {
            return Err(TrainError::Contract(format!("delta must lie in (0, 2], got {delta}")));
        }
        Ok(APMTracker {
            delta,
            epoch: 0,
            entries: HashMap::new(),
            history: None,
        })
    }

    pub fn with_history(delta: f64) -> Result<Self, TrainError> {
        let mut tracker = Self::new(delta)?;
        tracker.history = Some(HashMap::new());
        Ok(tracker)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Number of completed epochs recorded with [`APMTracker::finish_epoch`].
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn finish_epoch(&mut self) {
        self.epoch += 1;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Current APM; zero for keys never updated.
    pub fn get(&self, key: &ApmKey) -> f64 {
        self.entries.get(key).map_or(0.0, |e| e.value)
    }

    pub fn contains(&self, key: &ApmKey) -> bool {
        self.entries.contains_key(key)
    }

    /// Step counter of `key`, zero if never updated.
    pub fn steps(&self, key: &ApmKey) -> u64 {
        self.entries.get(key).map_or(0, |e| e.last_t)
    }

    pub fn update(&mut self, key: ApmKey, pm: f64, t: u64) -> Result<f64, TrainError> {
        let prior = self
            .entries
            .get(&key)
            .copied()
            .unwrap_or(Entry { value: 0.0, last_t: 0 });
        if t <= prior.last_t {
            return Err(TrainError::Contract(format!(
                "APM step {t} for {key:?} does not follow step {}",
                prior.last_t
            )));
        }
        let w = self.delta / (t as f64 + 1.0);
        if w > 1.0 {
            return Err(TrainError::Contract(format!("delta/(t+1) = {w} exceeds 1")));
        }
        let value = pm * w + prior.value * (1.0 - w);
        if let Some(history) = &mut self.history {
            history.entry(key.clone()).or_default().push(pm);
        }
        self.entries.insert(key, Entry { value, last_t: t });
        Ok(value)
    }

    /// Updates `key` at its next step.
    pub fn record(&mut self, key: ApmKey, pm: f64) -> Result<f64, TrainError> {
        let t = self.steps(&key) + 1;
        self.update(key, pm, t)
    }

    /// Records the pseudo-margin of every class of `head` from one set of
    /// logits.
    pub fn record_logits(&mut self, example: &str, head: usize, z: &Logits) -> Result<(), TrainError> {
        for c in 0..NUM_CLASSES {
            self.record(ApmKey::new(example, head, c), pseudo_margin(z, c))?;
        }
        Ok(())
    }

    pub fn history(&self, key: &ApmKey) -> Option<&[f64]> {
        self.history.as_ref()?.get(key).map(Vec::as_slice)
    }

    /// Recomputes the recurrence for `key` from its stored PM history, using
    /// steps `1..=n`. Requires oracle mode.
    pub fn replay(&self, key: &ApmKey) -> Result<f64, TrainError> {
        let pms = self
            .history(key)
            .ok_or_else(|| TrainError::Contract(format!("no PM history for {key:?}")))?;
        Ok(replay_recurrence(pms, self.delta))
    }
}

/// The moving-average recurrence applied to a PM stream from a zero start.
pub fn replay_recurrence(pms: &[f64], delta: f64) -> f64 {
    pms.iter().enumerate().fold(0.0, |prev, (i, &pm)| {
        let w = delta / ((i + 1) as f64 + 1.0);
        pm * w + prev * (1.0 - w)
    })
}

/// Plain average of a PM history; reference semantics for the running value.
pub fn apm_reference_average(pms: &[f64]) -> Result<f64, TrainError> {
    if pms.is_empty() {
        return Err(TrainError::Contract("APM average of an empty history".into()));
    }
    Ok(pms.iter().sum::<f64>() / pms.len() as f64)
}

/// Linear interpolation between closest ranks; `-inf` for an empty slice.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!((0.0..=100.0).contains(&p), "percentile must lie in [0, 100]");
    if values.is_empty() {
        return f64::NEG_INFINITY;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Per-class APM percentile threshold of one head over its agreed examples.
///
/// `agreed` pairs an example id with the class the heads agreed on.
pub fn compute_gamma(tracker: &APMTracker, agreed: &[(&str, usize)], p: f64, head: usize) -> [f64; NUM_CLASSES] {
    let mut per_class: [Vec<f64>; NUM_CLASSES] = Default::default();
    for &(example, class) in agreed {
        per_class[class].push(tracker.get(&ApmKey::new(example, head, class)));
    }
    per_class.map(|values| percentile(&values, p))
}
