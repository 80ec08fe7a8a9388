use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Example, Task};

/// Built-in list used by the English heuristic: a text must contain at least
/// `min_stopwords` of these.
pub const ENGLISH_STOPWORDS: [&str; 50] = [
    "the", "a", "an", "and", "or", "but", "if", "of", "to", "in", "on", "at", "for", "with", "by", "from", "about",
    "as", "is", "are", "was", "were", "be", "been", "do", "does", "did", "have", "has", "had", "i", "you", "he", "she",
    "it", "we", "they", "me", "my", "your", "this", "that", "what", "how", "why", "who", "can", "will", "not", "so",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FilterReason {
    Empty,
    NoAlphabetic,
    NonEnglish,
    MissingLabel,
}

impl FilterReason {
    pub const ALL: [FilterReason; 4] = [
        FilterReason::Empty,
        FilterReason::NoAlphabetic,
        FilterReason::NonEnglish,
        FilterReason::MissingLabel,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Drop unlabeled examples. Off for corpora that are meant to be unlabeled.
    pub require_labels: bool,
    pub english_only: bool,
    /// Minimum share of alphabetic characters that must be ASCII.
    pub min_ascii_ratio: f64,
    pub min_stopwords: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            require_labels: true,
            english_only: true,
            min_ascii_ratio: 0.85,
            min_stopwords: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub counts: BTreeMap<FilterReason, usize>,
    pub kept: usize,
    pub dropped: usize,
}

impl FilterReport {
    pub fn count(&self, reason: FilterReason) -> usize {
        self.counts.get(&reason).copied().unwrap_or(0)
    }
}

/// Removes examples failing any enabled filter. Each dropped example is
/// attributed to the first failing reason, in [`FilterReason::ALL`] order.
pub fn filter_examples(examples: &[Example], config: &FilterConfig) -> (Vec<Example>, FilterReport) {
    let mut counts: BTreeMap<FilterReason, usize> = FilterReason::ALL.iter().map(|r| (*r, 0)).collect();
    let mut kept = Vec::with_capacity(examples.len());
    for example in examples {
        match first_failure(example, config) {
            Some(reason) => *counts.entry(reason).or_default() += 1,
            None => kept.push(example.clone()),
        }
    }
    let dropped = examples.len() - kept.len();
    let report = FilterReport {
        counts,
        kept: kept.len(),
        dropped,
    };
    (kept, report)
}

fn first_failure(example: &Example, config: &FilterConfig) -> Option<FilterReason> {
    let response = match example.task {
        Task::Prompt => None,
        Task::Response => Some(example.response.as_deref().unwrap_or("")),
    };
    if example.prompt.trim().is_empty() || response.is_some_and(|r| r.trim().is_empty()) {
        return Some(FilterReason::Empty);
    }
    let text = match response {
        Some(r) => format!("{} {}", example.prompt, r),
        None => example.prompt.clone(),
    };
    if !text.chars().any(char::is_alphabetic) {
        return Some(FilterReason::NoAlphabetic);
    }
    if config.english_only && !looks_english(&text, config) {
        return Some(FilterReason::NonEnglish);
    }
    if config.require_labels && example.label.is_none() {
        return Some(FilterReason::MissingLabel);
    }
    None
}

fn looks_english(text: &str, config: &FilterConfig) -> bool {
    let (alpha, ascii) = text
        .chars()
        .filter(|c| c.is_alphabetic())
        .fold((0usize, 0usize), |(a, s), c| (a + 1, s + usize::from(c.is_ascii())));
    if (ascii as f64) < config.min_ascii_ratio * alpha as f64 {
        return false;
    }
    let lower = text.to_lowercase();
    let stopwords = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| ENGLISH_STOPWORDS.contains(w))
        .count();
    stopwords >= config.min_stopwords
}
