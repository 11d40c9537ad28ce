//! Tokens, sentinels and the vocabulary.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const CLS: &str = "[CLS]";
pub const MASK: &str = "[MASK]";
pub const PAD: &str = "[PAD]";
pub const REPL_OPEN: &str = "[REPL]";
pub const REPL_CLOSE: &str = "[/REPL]";
pub const UNK: &str = "[UNK]";

/// Reserved strings in id order. Their ids are fixed: `[PAD]` = 0,
/// `[UNK]` = 1, `[CLS]` = 2, `[MASK]` = 3, `[REPL]` = 4, `[/REPL]` = 5.
pub const SENTINELS: [&str; 6] = [PAD, UNK, CLS, MASK, REPL_OPEN, REPL_CLOSE];

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const MASK_ID: usize = 3;
pub const REPL_OPEN_ID: usize = 4;
pub const REPL_CLOSE_ID: usize = 5;

pub fn is_sentinel(token: &str) -> bool {
    SENTINELS.contains(&token)
}

/// A tokenized sentence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<String>);

impl TokenSeq {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    /// The sequence with a leading `[CLS]`, as fed to the tagger.
    pub fn with_cls(&self) -> TokenSeq {
        let mut out = Vec::with_capacity(self.len() + 1);
        out.push(CLS.to_string());
        out.extend(self.0.iter().cloned());
        TokenSeq(out)
    }

    pub fn first_sentinel(&self) -> Option<&str> {
        self.0.iter().map(String::as_str).find(|t| is_sentinel(t))
    }
}

impl std::ops::Index<usize> for TokenSeq {
    type Output = String;
    fn index(&self, i: usize) -> &String {
        &self.0[i]
    }
}

impl<S: Into<String>> FromIterator<S> for TokenSeq {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TokenSeq(iter.into_iter().map(Into::into).collect())
    }
}

impl<'a> IntoIterator for &'a TokenSeq {
    type Item = &'a String;
    type IntoIter = std::slice::Iter<'a, String>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// Splits text into tokens. Subword tokenizers plug in here.
pub trait Tokenizer {
    fn tokenize(&self, text: &str) -> TokenSeq;
}

/// Whitespace tokenizer. User text that happens to spell a sentinel is
/// rewritten so it can never collide with the reserved strings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WhitespaceTokenizer {
    pub lowercase: bool,
}

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> TokenSeq {
        text.split_whitespace()
            .map(|t| {
                let t = if self.lowercase {
                    t.to_lowercase()
                } else {
                    t.to_string()
                };
                if is_sentinel(&t) {
                    escape_sentinel(&t)
                } else {
                    t
                }
            })
            .collect()
    }
}

// `[MASK]` in user text becomes `[MASK]_`, which is no longer reserved.
fn escape_sentinel(token: &str) -> String {
    format!("{token}_")
}

/// Whitespace tokenization with case preserved.
pub fn tokenize(text: &str) -> TokenSeq {
    WhitespaceTokenizer::default().tokenize(text)
}

/// Joins tokens with single spaces. Fails on the first sentinel.
pub fn detokenize(seq: &TokenSeq) -> Result<String> {
    if let Some(s) = seq.first_sentinel() {
        return Err(Error::Sentinel(s.to_string()));
    }
    Ok(seq.0.join(" "))
}

/// Collapses runs of whitespace to single spaces and trims the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Token/id bijection. Ids `0..SENTINELS.len()` are the reserved sentinels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        for s in SENTINELS {
            v.insert(s);
        }
        v
    }

    /// Vocabulary over every token of `seqs`, in first-seen order.
    pub fn build<'a>(seqs: impl IntoIterator<Item = &'a TokenSeq>) -> Self {
        let mut v = Self::new();
        for seq in seqs {
            for t in seq {
                v.insert(t);
            }
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.ids.insert(token.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    /// Id of `token`, or `[UNK]`.
    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, seq: &TokenSeq) -> Vec<usize> {
        seq.iter().map(|t| self.id_or_unk(t)).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = String;

    fn try_from(tokens: Vec<String>) -> std::result::Result<Self, String> {
        if tokens.len() < SENTINELS.len() || tokens.iter().zip(SENTINELS).any(|(t, s)| t != s) {
            return Err("vocabulary must start with the reserved sentinels".into());
        }
        let mut v = Vocabulary {
            tokens: Vec::with_capacity(tokens.len()),
            ids: HashMap::with_capacity(tokens.len()),
        };
        for t in tokens {
            if v.ids.contains_key(&t) {
                return Err(format!("duplicate vocabulary entry `{t}`"));
            }
            v.insert(&t);
        }
        Ok(v)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}
