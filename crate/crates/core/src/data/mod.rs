//! Corpus ingestion, cleaning filters, stratified splits and labeled-subset
//! selection.
//!
//! Everything in here is a pure function of its inputs and an explicit seed,
//! so two calls with the same arguments produce identical outputs.

mod filter;
mod ingest;
mod split;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use filter::{filter_examples, FilterConfig, FilterReason, FilterReport, ENGLISH_STOPWORDS};
pub use ingest::{ingest_jsonl, ingest_many, read_corpus, write_corpus, IngestOutcome, RawRecord, SkippedLine};
pub use split::{select_labeled_subset, stratified_split, DatasetSplits, SplitFractions, TrainPool};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Binary safety label. The discriminant is the class index used by the
/// model heads: `Safe = 0`, `Harmful = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Safe,
    Harmful,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Safe, Label::Harmful];

    pub fn index(self) -> usize {
        match self {
            Label::Safe => 0,
            Label::Harmful => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Label> {
        match index {
            0 => Some(Label::Safe),
            1 => Some(Label::Harmful),
            _ => None,
        }
    }

    /// Case-insensitive; "unharmful" and "safe" are the same class.
    pub fn parse(s: &str) -> Option<Label> {
        match s.trim().to_ascii_lowercase().as_str() {
            "harmful" => Some(Label::Harmful),
            "unharmful" | "safe" => Some(Label::Safe),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Safe => "unharmful",
            Label::Harmful => "harmful",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Prompt,
    Response,
}

impl std::str::FromStr for Task {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "prompt" => Ok(Task::Prompt),
            "response" => Ok(Task::Response),
            other => Err(DataError::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// One human-LLM interaction: a prompt, or a prompt/response pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub prompt: String,
    pub response: Option<String>,
    pub label: Option<Label>,
    pub task: Task,
    pub source: String,
}

impl Example {
    pub fn prompt(id: impl Into<String>, prompt: impl Into<String>, label: Option<Label>) -> Self {
        Example {
            id: id.into(),
            prompt: prompt.into(),
            response: None,
            label,
            task: Task::Prompt,
            source: String::new(),
        }
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    /// Copy of this example with the label removed.
    pub fn masked(&self) -> Example {
        Example {
            label: None,
            ..self.clone()
        }
    }
}

/// Text fed to the featurizer.
///
/// Prompt task: the prompt unchanged. Response task:
/// `"[PROMPT] " + prompt + " [RESPONSE] " + response`.
pub fn build_model_input(example: &Example) -> Result<String, DataError> {
    match example.task {
        Task::Prompt => Ok(example.prompt.clone()),
        Task::Response => match example.response.as_deref() {
            Some(response) if !response.trim().is_empty() => {
                Ok(format!("[PROMPT] {} [RESPONSE] {}", example.prompt, response))
            }
            _ => Err(DataError::Contract(format!(
                "example {} has task=response but no response text",
                example.id
            ))),
        },
    }
}

/// Per-class counts `[safe, harmful]` over labeled examples.
pub fn class_counts(examples: &[Example]) -> [usize; 2] {
    let mut counts = [0usize; 2];
    for label in examples.iter().filter_map(|e| e.label) {
        counts[label.index()] += 1;
    }
    counts
}
