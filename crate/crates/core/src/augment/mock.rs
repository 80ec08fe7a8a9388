use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AugmentError, AugmentationKind, AugmentationRecord, Augmenter};
use crate::data::{build_model_input, Example, Task};
use crate::model::fnv1a_64;

const JITTER_PROBABILITY: f64 = 0.25;

/// A small general-purpose synonym table.
pub fn default_lexicon() -> BTreeMap<String, String> {
    [
        ("make", "create"),
        ("create", "make"),
        ("build", "construct"),
        ("construct", "build"),
        ("get", "obtain"),
        ("obtain", "get"),
        ("buy", "purchase"),
        ("purchase", "buy"),
        ("help", "assist"),
        ("assist", "help"),
        ("show", "tell"),
        ("tell", "show"),
        ("explain", "describe"),
        ("describe", "explain"),
        ("best", "easiest"),
        ("easiest", "best"),
        ("quickly", "fast"),
        ("fast", "quickly"),
        ("steal", "take"),
        ("hurt", "harm"),
        ("harm", "hurt"),
        ("kill", "eliminate"),
        ("weapon", "device"),
        ("secretly", "quietly"),
        ("quietly", "secretly"),
        ("people", "folks"),
        ("friend", "buddy"),
        ("home", "house"),
        ("house", "home"),
        ("please", "kindly"),
        ("need", "want"),
        ("want", "need"),
        ("write", "draft"),
        ("draft", "write"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

fn substitute(token: &str, lexicon: &BTreeMap<String, String>) -> String {
    let start = token.find(|c: char| c.is_alphanumeric());
    let end = token.rfind(|c: char| c.is_alphanumeric());
    let (Some(start), Some(end)) = (start, end) else {
        return token.to_string();
    };
    let end = end + token[end..].chars().next().map_or(1, char::len_utf8);
    let core = &token[start..end];
    match lexicon.get(&core.to_lowercase()) {
        Some(syn) => format!("{}{}{}", &token[..start], syn, &token[end..]),
        None => token.to_string(),
    }
}

fn rewrite<R: Rng + ?Sized>(text: &str, lexicon: &BTreeMap<String, String>, rng: &mut R) -> String {
    let mut tokens: Vec<String> = text.split_whitespace().map(|t| substitute(t, lexicon)).collect();
    // adjacent swaps only; no token moves more than one position
    let mut i = 0;
    while i + 1 < tokens.len() {
        if rng.random::<f64>() < JITTER_PROBABILITY {
            tokens.swap(i, i + 1);
            i += 2;
        } else {
            i += 1;
        }
    }
    tokens.join(" ")
}

/// Lexicon substitution followed by seeded adjacent-token jitter. For the
/// response task prompt and response are rewritten separately, then joined
/// into model-input form.
pub fn mock_augment<R: Rng + ?Sized>(
    example: &Example,
    lexicon: &BTreeMap<String, String>,
    generator: &str,
    rng: &mut R,
) -> Result<AugmentationRecord, AugmentError> {
    if lexicon.is_empty() {
        return Err(AugmentError::Contract("mock lexicon is empty".into()));
    }
    let text = match example.task {
        Task::Prompt => rewrite(&example.prompt, lexicon, rng),
        Task::Response => {
            let prompt = rewrite(&example.prompt, lexicon, rng);
            let response = rewrite(example.response.as_deref().unwrap_or_default(), lexicon, rng);
            build_model_input(&Example {
                prompt,
                response: Some(response),
                ..example.clone()
            })?
        }
    };
    if text.trim().is_empty() {
        return Err(AugmentError::Rejected(format!(
            "mock rewrite of {} is empty",
            example.id
        )));
    }
    Ok(AugmentationRecord::new(
        &example.id,
        AugmentationKind::Mock,
        generator,
        text,
    ))
}

/// Hermetic stand-in for an LLM generator. The RNG for each example is
/// derived from `(seed, example id)`, so output does not depend on the order
/// examples are processed in.
#[derive(Debug, Clone)]
pub struct MockAugmenter {
    pub name: String,
    pub seed: u64,
    pub lexicon: BTreeMap<String, String>,
}

impl MockAugmenter {
    pub fn new(name: impl Into<String>, seed: u64, lexicon: BTreeMap<String, String>) -> Self {
        MockAugmenter {
            name: name.into(),
            seed,
            lexicon,
        }
    }

    pub fn rng_for(&self, example_id: &str) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a_64(example_id.as_bytes()));
        rng
    }
}

impl Augmenter for MockAugmenter {
    fn kind(&self) -> AugmentationKind {
        AugmentationKind::Mock
    }

    fn generator(&self) -> String {
        self.name.clone()
    }

    fn augment(&self, example: &Example) -> Result<AugmentationRecord, AugmentError> {
        mock_augment(example, &self.lexicon, &self.name, &mut self.rng_for(&example.id))
    }
}
