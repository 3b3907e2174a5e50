//! Desk-scale generative retrieval laboratory.
//!
//! A single small encoder-decoder sequence model is trained to map document
//! text to document identifiers (the indexing task) and query text to
//! document identifiers (the retrieval task). The crate covers the full
//! pipeline:
//!
//! - [`corpus`]: ingestion, vocabulary, train/validation splits
//! - [`docid`]: atomic, naive-string, and semantic-string identifier spaces,
//!   with the embeddings, k-means, and decimal trie behind the semantic scheme
//! - [`model`]: the transformer, hand-derived gradients, Adam
//! - [`train`]: indexing/retrieval example generation, task mixing, the loop
//! - [`retrieve`]: logit ranking and (optionally trie-constrained) beam search
//! - [`baselines`]: Okapi BM25 and a contrastively trained dual encoder
//! - [`eval`], [`experiment`]: Hits@N, memorization, forgetting, orchestration
//!
//! Data-parallel inner loops (batch gradients, k-means assignment, batched
//! decoding, evaluation) run on rayon when the default `parallel` feature is
//! enabled and sequentially otherwise; results are identical in both modes.

pub mod baselines;
pub mod config;
pub mod corpus;
pub mod docid;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod retrieve;
pub mod seeding;
pub mod synth;
pub mod tensor;
pub mod train;

pub(crate) mod par;

pub use error::{Error, Result};
