use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    Supervised,
    FixMatch,
    MarginMatch,
    MultiMatch,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Supervised,
        Algorithm::FixMatch,
        Algorithm::MarginMatch,
        Algorithm::MultiMatch,
    ];

    pub fn head_count(self) -> usize {
        match self {
            Algorithm::MultiMatch => 3,
            _ => 1,
        }
    }

    pub fn uses_unlabeled(self) -> bool {
        self != Algorithm::Supervised
    }

    pub fn uses_apm(self) -> bool {
        matches!(self, Algorithm::MarginMatch | Algorithm::MultiMatch)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Supervised => "Supervised",
            Algorithm::FixMatch => "FixMatch",
            Algorithm::MarginMatch => "MarginMatch",
            Algorithm::MultiMatch => "MultiMatch",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "supervised" => Ok(Algorithm::Supervised),
            "fixmatch" => Ok(Algorithm::FixMatch),
            "marginmatch" => Ok(Algorithm::MarginMatch),
            "multimatch" => Ok(Algorithm::MultiMatch),
            other => Err(TrainError::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// Every knob of a training run. Defaults are conventions for this kind of
/// training, not measured optima.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    /// Labeled batch size `B`.
    #[serde(alias = "B")]
    pub batch_size: usize,
    /// Unlabeled-to-labeled ratio; each step draws `mu * batch_size` unlabeled
    /// examples.
    pub mu: usize,
    /// Fixed confidence threshold.
    pub tau: f64,
    pub lambda_u: f64,
    /// Weight of single-head ("useful and hard") pseudo-labels.
    pub w_d: f64,
    /// APM moving-average parameter.
    pub delta: f64,
    pub gamma_percentile: f64,
    /// Momentum of the adaptive-threshold EMAs.
    pub ema_momentum: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub feature_dim: usize,
    pub hidden: usize,
    pub weak_drop_probability: f64,
    /// Generate mock strong augmentations for examples missing from the cache.
    pub mock_fallback: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::FixMatch,
            batch_size: 32,
            mu: 7,
            tau: 0.95,
            lambda_u: 1.0,
            w_d: 0.5,
            delta: 1.0,
            gamma_percentile: 10.0,
            ema_momentum: 0.999,
            epochs: 10,
            learning_rate: 0.1,
            weight_decay: 1e-4,
            seed: 0,
            feature_dim: 1 << 18,
            hidden: 256,
            weak_drop_probability: 0.0,
            mock_fallback: true,
        }
    }
}

impl TrainConfig {
    pub fn unlabeled_batch(&self) -> usize {
        self.mu * self.batch_size
    }

    pub fn head_count(&self) -> usize {
        self.algorithm.head_count()
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::Config(msg));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.mu == 0 {
            return fail("mu must be at least 1".into());
        }
        // tau = 1 is allowed: it switches the fixed filter off entirely.
        if !(self.tau > 0.5 && self.tau <= 1.0) {
            return fail(format!("tau must lie in (0.5, 1], got {}", self.tau));
        }
        if !(self.lambda_u >= 0.0 && self.lambda_u.is_finite()) {
            return fail(format!(
                "lambda_u must be a finite non-negative number, got {}",
                self.lambda_u
            ));
        }
        if !(0.0..=1.0).contains(&self.w_d) {
            return fail(format!("w_d must lie in [0, 1], got {}", self.w_d));
        }
        // delta / (t + 1) must not exceed 1 from the first update (t = 1) on.
        if !(self.delta > 0.0 && self.delta <= 2.0) {
            return fail(format!("delta must lie in (0, 2], got {}", self.delta));
        }
        if !(0.0..=100.0).contains(&self.gamma_percentile) {
            return fail(format!(
                "gamma_percentile must lie in [0, 100], got {}",
                self.gamma_percentile
            ));
        }
        if !(self.ema_momentum > 0.0 && self.ema_momentum < 1.0) {
            return fail(format!("ema_momentum must lie in (0, 1), got {}", self.ema_momentum));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !self.feature_dim.is_power_of_two() || self.feature_dim < 1 << 10 || self.feature_dim > 1 << 32 {
            return fail(format!(
                "feature_dim must be a power of two in [2^10, 2^32], got {}",
                self.feature_dim
            ));
        }
        if self.hidden == 0 {
            return fail("hidden must be at least 1".into());
        }
        if !(0.0..0.5).contains(&self.weak_drop_probability) {
            return fail(format!(
                "weak_drop_probability must lie in [0, 0.5), got {}",
                self.weak_drop_probability
            ));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let config: TrainConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
