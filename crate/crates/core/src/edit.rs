//! Edit tags and edit plans.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How insertion spans are represented for the insertion model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InsertionMode {
    /// The tagger predicts the span length; `INS_k` becomes `k` masks.
    Masking,
    /// The tagger predicts a generic `INS`; the insertion model fills a
    /// fixed-length span and marks its end with `[PAD]`.
    Infilling,
}

impl fmt::Display for InsertionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InsertionMode::Masking => "masking",
            InsertionMode::Infilling => "infilling",
        })
    }
}

impl FromStr for InsertionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "masking" | "mask" => Ok(InsertionMode::Masking),
            "infilling" | "infill" => Ok(InsertionMode::Infilling),
            _ => Err(Error::Config(format!("unknown insertion mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Base {
    Keep,
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Insertion {
    #[default]
    None,
    /// `INS_k`, masking mode only.
    Count(usize),
    /// `INS`, infilling mode only.
    Generic,
}

impl Insertion {
    pub fn is_some(self) -> bool {
        self != Insertion::None
    }

    pub fn check_mode(self, mode: InsertionMode) -> Result<()> {
        match (self, mode) {
            (Insertion::Count(0), _) => Err(Error::Plan("INS_0 is not a valid tag".into())),
            (Insertion::Count(_), InsertionMode::Infilling) => {
                Err(Error::ModeMismatch("INS_k tag in infilling mode".into()))
            }
            (Insertion::Generic, InsertionMode::Masking) => {
                Err(Error::ModeMismatch("generic INS tag in masking mode".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Per-token tag: a base operation optionally followed by an insertion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tag {
    pub base: Base,
    pub insertion: Insertion,
}

impl Tag {
    pub const KEEP: Tag = Tag {
        base: Base::Keep,
        insertion: Insertion::None,
    };
    pub const DELETE: Tag = Tag {
        base: Base::Delete,
        insertion: Insertion::None,
    };

    pub fn new(base: Base, insertion: Insertion) -> Self {
        Tag { base, insertion }
    }

    pub fn is_keep(self) -> bool {
        self.base == Base::Keep
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.base {
            Base::Keep => "KEEP",
            Base::Delete => "DEL",
        })?;
        match self.insertion {
            Insertion::None => Ok(()),
            Insertion::Count(k) => write!(f, "+INS_{k}"),
            Insertion::Generic => f.write_str("+INS"),
        }
    }
}

impl FromStr for Tag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Data(format!("malformed tag `{s}`"));
        let (base, ins) = match s.split_once('+') {
            Some((b, i)) => (b, Some(i)),
            None => (s, None),
        };
        let base = match base {
            "KEEP" => Base::Keep,
            "DEL" | "DELETE" => Base::Delete,
            _ => return Err(bad()),
        };
        let insertion = match ins {
            None => Insertion::None,
            Some("INS") => Insertion::Generic,
            Some(i) => {
                let k = i
                    .strip_prefix("INS_")
                    .and_then(|k| k.parse::<usize>().ok())
                    .filter(|&k| k >= 1)
                    .ok_or_else(bad)?;
                Insertion::Count(k)
            }
        };
        Ok(Tag { base, insertion })
    }
}

impl Serialize for Tag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The closed tag inventory for a given mode, with a dense id per tag.
///
/// Masking: `{KEEP, DEL} x {none, INS_1 .. INS_max_span}`.
/// Infilling: `{KEEP, DEL, KEEP+INS, DEL+INS}`. Id 0 is always `KEEP`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagSet {
    pub mode: InsertionMode,
    pub max_span: usize,
}

impl TagSet {
    pub fn new(mode: InsertionMode, max_span: usize) -> Self {
        TagSet { mode, max_span }
    }

    fn per_base(&self) -> usize {
        match self.mode {
            InsertionMode::Masking => self.max_span + 1,
            InsertionMode::Infilling => 2,
        }
    }

    pub fn len(&self) -> usize {
        2 * self.per_base()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, tag: Tag) -> Result<usize> {
        tag.insertion.check_mode(self.mode)?;
        let ins = match tag.insertion {
            Insertion::None => 0,
            Insertion::Generic => 1,
            Insertion::Count(k) if k <= self.max_span => k,
            Insertion::Count(k) => {
                return Err(Error::Plan(format!("INS_{k} exceeds max span {}", self.max_span)))
            }
        };
        let base = match tag.base {
            Base::Keep => 0,
            Base::Delete => 1,
        };
        Ok(base * self.per_base() + ins)
    }

    pub fn tag(&self, id: usize) -> Tag {
        assert!(id < self.len(), "tag id {id} out of range");
        let per = self.per_base();
        let base = if id / per == 0 { Base::Keep } else { Base::Delete };
        let ins = id % per;
        let insertion = match (ins, self.mode) {
            (0, _) => Insertion::None,
            (_, InsertionMode::Infilling) => Insertion::Generic,
            (k, InsertionMode::Masking) => Insertion::Count(k),
        };
        Tag { base, insertion }
    }
}

/// Tagger target/output: tags over source tokens plus next-token pointers.
///
/// Positions are 0 for `[CLS]` and `1..=n` for source tokens; `tags[i - 1]`
/// belongs to position `i`. `pointers[i] = Some(j)` means that in the output
/// the token at `i` is directly followed by the token at `j`. An insertion
/// directly after `[CLS]` (before every kept token) is `cls_insertion`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditPlan {
    pub tags: Vec<Tag>,
    #[serde(default, with = "insertion_serde")]
    pub cls_insertion: Insertion,
    pub pointers: Vec<Option<usize>>,
}

impl EditPlan {
    /// Keep everything in source order.
    pub fn identity(n: usize) -> Self {
        let mut pointers: Vec<Option<usize>> = (1..=n).map(Some).collect();
        pointers.push(None);
        EditPlan {
            tags: vec![Tag::KEEP; n],
            cls_insertion: Insertion::None,
            pointers,
        }
    }

    pub fn source_len(&self) -> usize {
        self.tags.len()
    }

    /// Tag at position `pos` (0 = `[CLS]`, which is always kept).
    pub fn tag_at(&self, pos: usize) -> Tag {
        if pos == 0 {
            Tag::new(Base::Keep, self.cls_insertion)
        } else {
            self.tags[pos - 1]
        }
    }

    pub fn is_kept(&self, pos: usize) -> bool {
        pos == 0 || self.tags[pos - 1].is_keep()
    }

    pub fn kept_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (1..=self.tags.len()).filter(|&p| self.tags[p - 1].is_keep())
    }

    /// Deleted positions that directly follow `pos` in source order, up to
    /// the next kept position.
    pub fn trailing_deleted(&self, pos: usize) -> std::ops::Range<usize> {
        let start = pos + 1;
        let mut end = start;
        while end <= self.tags.len() && !self.tags[end - 1].is_keep() {
            end += 1;
        }
        start..end
    }

    /// Checks the structural invariants: every pointer targets a distinct
    /// kept position, only kept positions point, and the pointer chain from
    /// `[CLS]` is acyclic and visits every kept position.
    pub fn validate(&self) -> Result<()> {
        let n = self.tags.len();
        if self.pointers.len() != n + 1 {
            return Err(Error::Plan(format!(
                "expected {} pointer slots, got {}",
                n + 1,
                self.pointers.len()
            )));
        }
        let mut pointed = vec![false; n + 1];
        for (from, to) in self.pointers.iter().enumerate() {
            let Some(to) = *to else { continue };
            if !self.is_kept(from) {
                return Err(Error::Plan(format!("deleted position {from} has a pointer")));
            }
            if to == 0 || to > n {
                return Err(Error::Plan(format!("pointer {from} -> {to} out of range")));
            }
            if !self.is_kept(to) {
                return Err(Error::Plan(format!(
                    "pointer {from} -> {to} targets a deleted token"
                )));
            }
            if std::mem::replace(&mut pointed[to], true) {
                return Err(Error::Plan(format!("position {to} is pointed to twice")));
            }
        }
        let mut seen = vec![false; n + 1];
        seen[0] = true;
        let mut cur = 0;
        while let Some(next) = self.pointers[cur] {
            if std::mem::replace(&mut seen[next], true) {
                return Err(Error::Cycle(next));
            }
            cur = next;
        }
        if let Some(p) = self.kept_positions().find(|&p| !seen[p]) {
            return Err(Error::Unreachable(p));
        }
        Ok(())
    }

    pub fn check_mode(&self, mode: InsertionMode) -> Result<()> {
        self.cls_insertion.check_mode(mode)?;
        self.tags.iter().try_for_each(|t| t.insertion.check_mode(mode))
    }
}

pub(crate) mod insertion_serde {
    use super::Insertion;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ins: &Insertion, s: S) -> Result<S::Ok, S::Error> {
        match ins {
            Insertion::None => s.serialize_none(),
            Insertion::Count(k) => s.collect_str(&format_args!("INS_{k}")),
            Insertion::Generic => s.serialize_str("INS"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Insertion, D::Error> {
        let raw = Option::<String>::deserialize(d)?;
        match raw.as_deref() {
            None => Ok(Insertion::None),
            Some("INS") => Ok(Insertion::Generic),
            Some(s) => s
                .strip_prefix("INS_")
                .and_then(|k| k.parse().ok())
                .filter(|&k: &usize| k >= 1)
                .map(Insertion::Count)
                .ok_or_else(|| serde::de::Error::custom(format!("bad insertion `{s}`"))),
        }
    }
}
