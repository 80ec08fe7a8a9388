//! Semi-supervised training of binary harmful/unharmful text classifiers.
//!
//! The crate is split into five layers:
//!
//! * [`data`]: JSONL ingestion, cleaning filters, stratified splits and
//!   class-balanced labeled subsets.
//! * [`model`]: hashed n-gram features, a one-hidden-layer MLP with one or
//!   three heads, hand-written backprop and SGD.
//! * [`augment`]: weak token dropout, LLM rewrites, backtranslation, a
//!   hermetic mock generator and the persistent augmentation cache.
//! * [`ssl`]: supervised, FixMatch, MarginMatch and MultiMatch training.
//! * [`harness`]: metrics, synthetic corpora, multi-seed experiments and
//!   report rendering.

pub mod augment;
pub mod data;
pub mod harness;
pub mod model;
pub mod ssl;

pub use data::{build_model_input, DataError, DatasetSplits, Example, Label, Task};
pub use model::{ModelError, ModelParams};
