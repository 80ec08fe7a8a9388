//! Hashed n-gram featurizer feeding a one-hidden-layer MLP with one or three
//! two-logit output heads, trained with plain SGD.

mod checkpoint;
mod features;
mod mlp;

use thiserror::Error;

pub use checkpoint::CHECKPOINT_MAGIC;
pub use features::{fnv1a_64, tokenize, vectorize, FeatureVector};
pub use mlp::{backward, forward, init_params, sgd_step, ForwardTrace, GradientSet, HeadParams, ModelParams, ParamRef};

/// Number of classes every head predicts.
pub const NUM_CLASSES: usize = 2;

/// Smallest probability fed to the logarithm in [`cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite gradient in {0}")]
    NonFinite(&'static str),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Two raw scores for one head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Logits(pub [f64; NUM_CLASSES]);

pub type Probs = [f64; NUM_CLASSES];

/// Max-subtracted softmax.
pub fn softmax(z: &Logits) -> Probs {
    let max = z.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = z.0.map(|v| (v - max).exp());
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

pub fn cross_entropy(probs: &Probs, target: usize) -> f64 {
    -probs[target].max(PROB_FLOOR).ln()
}

/// Gradient of [`cross_entropy`] composed with [`softmax`] with respect to
/// the logits. Zero once the target probability sits on the floor, where the
/// clamped loss is flat.
pub fn cross_entropy_logit_grad(probs: &Probs, target: usize) -> [f64; NUM_CLASSES] {
    if probs[target] <= PROB_FLOOR {
        return [0.0; NUM_CLASSES];
    }
    let mut g = *probs;
    g[target] -= 1.0;
    g
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
