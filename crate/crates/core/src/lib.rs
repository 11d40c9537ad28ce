//! Text editing as tagging plus insertion.
//!
//! A source sentence is rewritten in two non-autoregressive steps. A tagger
//! decides which source tokens survive, in which order (via pointers between
//! tokens), and where new material goes. An insertion model then fills the
//! resulting `[MASK]` slots in a single pass.
//!
//! The crate is organized bottom-up:
//!
//! - [`text`]: tokenization, sentinels and the vocabulary.
//! - [`edit`]: tags and edit plans (the tagger's targets).
//! - [`align`]: building edit plans from `(source, target)` pairs.
//! - [`realize`]: daisy chaining pointers and constrained beam search.
//! - [`insertion`]: the masked insertion input and applying predictions.
//! - [`models`]: toy transformer tagger and insertion model, training and
//!   the end-to-end pipeline.
//! - [`metrics`]: SARI, exact match, BLEU-4, ROUGE-L, TER and friends.
//! - [`corpus`] and [`config`]: JSONL records and run configuration used by
//!   the `felix` binary.

pub mod align;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod edit;
mod error;
pub mod insertion;
pub mod metrics;
pub mod models;
pub mod realize;
pub mod text;

pub use error::{Error, Result};
