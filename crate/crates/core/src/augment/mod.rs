//! Weak and strong views of training text.
//!
//! Strong augmentations (LLM rewrites, backtranslations, mock rewrites) are
//! generated ahead of training and stored in an [`AugmentationCache`]; the
//! trainer later draws one stored record per use with [`select_strong`].

mod cache;
mod endpoint;
mod mock;
mod pipeline;
mod weak;

use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{AugmentationCache, CacheKey};
pub use endpoint::{
    backtranslate, llm_augment, BacktranslationAugmenter, ChatEndpoint, LlmAugmenter, RetryPolicy, TranslateEndpoint,
    DEFAULT_PIVOTS,
};
pub use mock::{default_lexicon, mock_augment, MockAugmenter};
pub use pipeline::{generate_corpus_augmentations, GenerationFailure, GenerationReport};
pub use weak::weak_augment;

use crate::data::{DataError, Example};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("augmentation endpoint unavailable after {attempts} attempt(s): {reason}")]
    Unavailable { attempts: u32, reason: String },
    #[error("generation rejected: {0}")]
    Rejected(String),
    #[error("cache already holds {0}")]
    DuplicateKey(CacheKey),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("cache I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentationKind {
    Llm,
    Backtranslation,
    Mock,
}

impl AugmentationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AugmentationKind::Llm => "llm",
            AugmentationKind::Backtranslation => "backtranslation",
            AugmentationKind::Mock => "mock",
        }
    }
}

impl fmt::Display for AugmentationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AugmentationKind {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "llm" => Ok(AugmentationKind::Llm),
            "backtranslation" | "bt" => Ok(AugmentationKind::Backtranslation),
            "mock" => Ok(AugmentationKind::Mock),
            other => Err(AugmentError::Config(format!("unknown augmentation kind {other:?}"))),
        }
    }
}

/// One stored strong augmentation. `(example_id, kind, generator)` is the
/// cache key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub example_id: String,
    pub kind: AugmentationKind,
    /// Model name, language chain such as `en-de-en`, or mock generator name.
    pub generator: String,
    /// Augmented model-input text.
    pub text: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

impl AugmentationRecord {
    pub fn new(example_id: &str, kind: AugmentationKind, generator: &str, text: String) -> Self {
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        AugmentationRecord {
            example_id: example_id.to_string(),
            kind,
            generator: generator.to_string(),
            text,
            created_at,
        }
    }

    pub fn key(&self) -> CacheKey {
        CacheKey {
            example_id: self.example_id.clone(),
            kind: self.kind,
            generator: self.generator.clone(),
        }
    }
}

pub const TEXT_PLACEHOLDER: &str = "{TEXT}";

/// Chat prompt used for LLM rewrites. `user_pattern` holds exactly one
/// `{TEXT}` placeholder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system: String,
    pub user_pattern: String,
    pub max_output_tokens: u32,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            system: "You rewrite short texts that are used to train a content-safety classifier. \
                     You always produce a rewrite and never add commentary."
                .into(),
            user_pattern: "Rewrite the text below. Swap every word or phrase that could read as harmful \
                           for a different expression that carries the same meaning and the same intent, \
                           whether that intent is benign or malicious. Reword the remaining parts slightly. \
                           Reply with the rewritten text only, without quotes or explanations.\n\n\
                           Text: {TEXT}"
                .into(),
            max_output_tokens: 512,
        }
    }
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let n = self.user_pattern.matches(TEXT_PLACEHOLDER).count();
        if n != 1 {
            return Err(AugmentError::Config(format!(
                "prompt template must contain exactly one {TEXT_PLACEHOLDER} placeholder, found {n}"
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(AugmentError::Config("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn render(&self, text: &str) -> String {
        self.user_pattern.replace(TEXT_PLACEHOLDER, text)
    }
}

/// A strong-augmentation generator for one cache-key `(kind, generator)`
/// slot.
pub trait Augmenter: Send + Sync {
    fn kind(&self) -> AugmentationKind;
    fn generator(&self) -> String;
    fn augment(&self, example: &Example) -> Result<AugmentationRecord, AugmentError>;
}

/// Uniform choice over `records`; returns the chosen text.
pub fn select_strong<'a, R: Rng + ?Sized>(
    records: &'a [AugmentationRecord],
    rng: &mut R,
) -> Result<&'a str, AugmentError> {
    if records.is_empty() {
        return Err(AugmentError::Contract("no augmentation records to select from".into()));
    }
    Ok(&records[rng.random_range(0..records.len())].text)
}
