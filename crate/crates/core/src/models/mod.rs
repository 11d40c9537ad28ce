//! Toy-scale neural components: a tagger with a pointer network and a
//! masked-LM insertion model, trained independently with manual backprop.

pub mod checkpoint;
pub mod inserter;
pub mod layers;
pub mod pipeline;
pub mod tagger;
pub mod tensor;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::align::AlignmentConfig;
use crate::edit::{InsertionMode, TagSet};
use crate::{Error, Result};

pub use checkpoint::Checkpoint;
pub use inserter::{InsertionExample, InsertionModel};
pub use layers::{EncoderConfig, Params};
pub use pipeline::{FelixModels, Prediction};
pub use tagger::{Tagger, TaggerExample, TaggerLoss};
pub use train::{train, OptimizerKind, StepLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub max_span: usize,
    pub mode: InsertionMode,
    pub pointing: bool,
    pub beam_size: usize,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub extra_pointer_layer: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 0.05,
            steps: 1000,
            batch_size: 8,
            seed: 0,
            dim: 64,
            layers: 2,
            heads: 4,
            ffn_dim: 128,
            max_len: 64,
            max_span: 8,
            mode: InsertionMode::Masking,
            pointing: true,
            beam_size: 5,
            optimizer: OptimizerKind::Sgd,
            momentum: 0.0,
            clip_norm: 1.0,
            extra_pointer_layer: false,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("steps", self.steps),
            ("batch_size", self.batch_size),
            ("dim", self.dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("max_len", self.max_len),
            ("max_span", self.max_span),
            ("beam_size", self.beam_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::Config("clip_norm must be non-negative".into()));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.max_span > self.max_len {
            return Err(Error::Config(format!(
                "max_span {} exceeds max_len {}",
                self.max_span, self.max_len
            )));
        }
        Ok(())
    }

    pub fn alignment(&self) -> AlignmentConfig {
        AlignmentConfig {
            mode: self.mode,
            max_span: self.max_span,
            pointing: self.pointing,
        }
    }

    pub fn tag_set(&self) -> TagSet {
        TagSet::new(self.mode, self.max_span)
    }

    pub fn encoder(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            dim: self.dim,
            layers: self.layers,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            max_len: self.max_len,
        }
    }
}
