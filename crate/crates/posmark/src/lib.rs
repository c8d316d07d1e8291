//! Model-free green-list text watermarking with POS-entropy adaptive
//! strength.
//!
//! The toolkit estimates how grammatically constrained each position of a
//! text is — the normalized conditional entropy of the next POS tag given
//! the preceding tag n-gram, learned from a tagged reference corpus — and
//! uses that signal twice:
//!
//! * at insertion, scaling the green-list logit bias per step so constrained
//!   positions stay untouched while flexible ones carry a strong mark;
//! * at detection, weighting each token's green/red evidence in a
//!   one-proportion z-test, without ever touching model logits.
//!
//! A bundled smoothed n-gram language model makes the whole
//! estimate/generate/detect/evaluate loop runnable offline; the `posmark`
//! binary wires the pieces into subcommands.

pub mod corpus;
pub mod detector;
pub mod error;
pub mod eval;
pub mod greenlist;
pub mod indeterminacy;
mod rng;
pub mod strategy;
pub mod toylm;
pub mod watermark;

pub use corpus::{LexiconTagger, PosTag, TagColumn, TaggedSentence, Tagger, Tagset, WordCategory};
pub use detector::{decide, DetectionReport, DetectorInputs, DEFAULT_Z_THRESHOLD};
pub use error::{Error, Result};
pub use greenlist::{GreenPartition, Vocabulary, WatermarkKey};
pub use indeterminacy::{
    build_lambda_table, count_ngrams, load_table, merge_tables_by_probability, save_table,
    IndeterminacyTable, NGramCounts,
};
pub use toylm::{sample_markov_tag_corpus, train_toy_lm, MarkovTagModel, ToyLm};
pub use watermark::{
    generate, GenerationRecord, LanguageModel, Mode, WatermarkConfig, DEFAULT_GAMMA,
    DEFAULT_STATIC_DELTA, DEFAULT_TEMPERATURE,
};
