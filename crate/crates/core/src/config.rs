//! Run configuration: a flat TOML document plus per-key overrides.
//!
//! Every key has a default, unknown keys are rejected, and the effective
//! configuration is embedded in every artifact the CLI writes.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::align::AlignmentConfig;
use crate::edit::InsertionMode;
use crate::metrics::SariVariant;
use crate::models::{Hyperparams, OptimizerKind};
use crate::{Error, Result};

/// Longest insertion span the alignment may produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanLimit {
    Tokens(usize),
    Unbounded,
}

impl SpanLimit {
    pub fn get(self) -> usize {
        match self {
            SpanLimit::Tokens(n) => n,
            SpanLimit::Unbounded => usize::MAX,
        }
    }
}

impl fmt::Display for SpanLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpanLimit::Tokens(n) => write!(f, "{n}"),
            SpanLimit::Unbounded => f.write_str("unbounded"),
        }
    }
}

impl FromStr for SpanLimit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "unbounded" {
            return Ok(SpanLimit::Unbounded);
        }
        s.parse()
            .map(SpanLimit::Tokens)
            .map_err(|_| Error::Config(format!("max_span must be a count or \"unbounded\", got `{s}`")))
    }
}

impl Serialize for SpanLimit {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SpanLimit::Tokens(n) => s.serialize_u64(*n as u64),
            SpanLimit::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for SpanLimit {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(SpanLimit::Tokens(n as usize)),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: InsertionMode,
    pub max_span: SpanLimit,
    pub pointing: bool,
    pub seed: u64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub beam_size: usize,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub clip_norm: f64,
    pub extra_pointer_layer: bool,
    pub lowercase: bool,
    pub sari_variant: SariVariant,
}

impl Default for RunConfig {
    fn default() -> Self {
        let h = Hyperparams::default();
        RunConfig {
            mode: h.mode,
            max_span: SpanLimit::Tokens(h.max_span),
            pointing: h.pointing,
            seed: h.seed,
            learning_rate: h.learning_rate,
            steps: h.steps,
            batch_size: h.batch_size,
            dim: h.dim,
            layers: h.layers,
            heads: h.heads,
            ffn_dim: h.ffn_dim,
            max_len: h.max_len,
            beam_size: h.beam_size,
            optimizer: h.optimizer,
            momentum: h.momentum,
            clip_norm: h.clip_norm,
            extra_pointer_layer: h.extra_pointer_layer,
            lowercase: false,
            sari_variant: SariVariant::Original,
        }
    }
}

/// Reads an override value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    /// Parses a TOML document and applies `overrides` (`key`, `value`) on
    /// top. Override keys may use `-` in place of `_`.
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for (key, value) in overrides {
            table.insert(key.replace('-', "_"), parse_value(value));
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        Ok(Self::load_with_keys(path, overrides)?.0)
    }

    /// Like [`RunConfig::load`], also returning the keys that were set
    /// explicitly in the file or by an override.
    pub fn load_with_keys(
        path: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<(Self, Vec<String>)> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        let cfg = Self::from_toml(&text, overrides)?;
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut keys: Vec<String> = table.keys().cloned().collect();
        keys.extend(overrides.iter().map(|(k, _)| k.replace('-', "_")));
        keys.sort();
        keys.dedup();
        Ok((cfg, keys))
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_span == SpanLimit::Tokens(0) {
            return Err(Error::Config("max_span must be positive".into()));
        }
        if self.mode == InsertionMode::Infilling && self.max_span == SpanLimit::Unbounded {
            return Err(Error::Config("infilling needs a bounded max_span".into()));
        }
        Ok(())
    }

    pub fn alignment(&self) -> AlignmentConfig {
        AlignmentConfig {
            mode: self.mode,
            max_span: self.max_span.get(),
            pointing: self.pointing,
        }
    }

    /// Training settings; fails on an unbounded `max_span`, which would give
    /// an unbounded tag set.
    pub fn hyperparams(&self) -> Result<Hyperparams> {
        let SpanLimit::Tokens(max_span) = self.max_span else {
            return Err(Error::Config("training needs a bounded max_span".into()));
        };
        let h = Hyperparams {
            learning_rate: self.learning_rate,
            steps: self.steps,
            batch_size: self.batch_size,
            seed: self.seed,
            dim: self.dim,
            layers: self.layers,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            max_len: self.max_len,
            max_span,
            mode: self.mode,
            pointing: self.pointing,
            beam_size: self.beam_size,
            optimizer: self.optimizer,
            momentum: self.momentum,
            clip_norm: self.clip_norm,
            extra_pointer_layer: self.extra_pointer_layer,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
