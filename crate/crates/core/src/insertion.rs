//! The insertion model's input: kept tokens in output order, `[MASK]` slots,
//! and the replaced source text wrapped in `[REPL]` ... `[/REPL]`.

use serde::{Deserialize, Serialize};

use crate::align::AlignmentConfig;
use crate::edit::InsertionMode;
use crate::realize::{Skeleton, SkeletonItem, SlotKind};
use crate::text::{is_sentinel, TokenSeq, MASK, PAD, REPL_CLOSE, REPL_OPEN};
use crate::{Error, Result};

/// One block of consecutive masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpan {
    /// Index of the slot among all slots of the skeleton, in output order.
    pub edge: usize,
    /// Index of the first `[MASK]` in `tokens`.
    pub start: usize,
    /// Number of `[MASK]` tokens: the declared `k` when masking, the padded
    /// length (`max_span`) when infilling.
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedSeq {
    pub tokens: TokenSeq,
    pub mask_positions: Vec<usize>,
    pub spans: Vec<MaskSpan>,
    pub mode: InsertionMode,
}

impl MaskedSeq {
    pub fn mask_count(&self) -> usize {
        self.mask_positions.len()
    }
}

/// Expands the skeleton's slots into masks. A slot that replaces deleted
/// tokens is preceded by those tokens inside `[REPL]` ... `[/REPL]`.
pub fn build_insertion_input(skeleton: &Skeleton, cfg: &AlignmentConfig) -> Result<MaskedSeq> {
    let mut tokens = Vec::new();
    let mut mask_positions = Vec::new();
    let mut spans = Vec::new();
    for item in &skeleton.0 {
        match item {
            SkeletonItem::Token(t) => tokens.push(t.clone()),
            SkeletonItem::Slot { replaced, insertion } => {
                let len = match (insertion, cfg.mode) {
                    (SlotKind::Count(k), InsertionMode::Masking) => *k,
                    (SlotKind::Generic, InsertionMode::Infilling) => cfg.max_span,
                    (SlotKind::Count(_), InsertionMode::Infilling) => {
                        return Err(Error::ModeMismatch("INS_k slot in infilling mode".into()))
                    }
                    (SlotKind::Generic, InsertionMode::Masking) => {
                        return Err(Error::ModeMismatch("generic INS slot in masking mode".into()))
                    }
                };
                if !replaced.is_empty() {
                    tokens.push(REPL_OPEN.to_string());
                    tokens.extend(replaced.iter().cloned());
                    tokens.push(REPL_CLOSE.to_string());
                }
                spans.push(MaskSpan {
                    edge: spans.len(),
                    start: tokens.len(),
                    len,
                });
                for _ in 0..len {
                    mask_positions.push(tokens.len());
                    tokens.push(MASK.to_string());
                }
            }
        }
    }
    Ok(MaskedSeq {
        tokens: TokenSeq(tokens),
        mask_positions,
        spans,
        mode: cfg.mode,
    })
}

/// Fills the masks with `predictions` (one per mask, in order), then drops
/// `[PAD]` predictions and the `[REPL]` regions.
pub fn apply_insertion(masked: &MaskedSeq, predictions: &[String]) -> Result<TokenSeq> {
    if predictions.len() != masked.mask_count() {
        return Err(Error::PredictionCount {
            expected: masked.mask_count(),
            got: predictions.len(),
        });
    }
    if let Some(bad) = predictions.iter().find(|p| p.as_str() != PAD && is_sentinel(p)) {
        return Err(Error::Sentinel(bad.clone()));
    }
    let mut out = Vec::new();
    let mut preds = predictions.iter();
    let mut in_repl = false;
    for tok in masked.tokens.iter() {
        match tok.as_str() {
            REPL_OPEN => in_repl = true,
            REPL_CLOSE => in_repl = false,
            _ if in_repl => {}
            MASK => {
                let p = preds.next().expect("prediction count checked above");
                if p != PAD {
                    out.push(p.clone());
                }
            }
            _ => out.push(tok.clone()),
        }
    }
    Ok(TokenSeq(out))
}

enum Unit<'a> {
    Kept(&'a str),
    Span { len: usize, exact: bool },
}

fn units(masked: &MaskedSeq) -> Vec<Unit<'_>> {
    let mut units = Vec::new();
    let mut spans = masked.spans.iter().peekable();
    let mut i = 0;
    let toks = masked.tokens.as_slice();
    while i < toks.len() {
        if let Some(span) = spans.next_if(|s| s.start == i) {
            units.push(Unit::Span {
                len: span.len,
                exact: masked.mode == InsertionMode::Masking,
            });
            i += span.len;
            continue;
        }
        match toks[i].as_str() {
            REPL_OPEN => {
                while i < toks.len() && toks[i] != REPL_CLOSE {
                    i += 1;
                }
            }
            t => units.push(Unit::Kept(t)),
        }
        i += 1;
    }
    units
}

/// Gold fillers for every mask such that [`apply_insertion`] reproduces
/// `target`. In infilling mode the unused tail of each span is `[PAD]`.
/// When several segmentations fit, shorter spans earlier win.
pub fn oracle_insertions(masked: &MaskedSeq, target: &TokenSeq) -> Result<Vec<String>> {
    let units = units(masked);
    let tgt = target.as_slice();
    let mut dead = vec![vec![false; tgt.len() + 1]; units.len() + 1];
    let mut lens = vec![0; units.len()];
    if !fit(&units, tgt, 0, 0, &mut dead, &mut lens) {
        return Err(Error::Alignment(format!(
            "insertion input `{}` cannot produce target `{}`",
            masked.tokens, target
        )));
    }
    let mut out = Vec::with_capacity(masked.mask_count());
    let mut t = 0;
    for (unit, &used) in units.iter().zip(&lens) {
        match unit {
            Unit::Kept(_) => t += 1,
            Unit::Span { len, .. } => {
                out.extend(tgt[t..t + used].iter().cloned());
                out.extend(std::iter::repeat_n(PAD.to_string(), len - used));
                t += used;
            }
        }
    }
    Ok(out)
}

fn fit(
    units: &[Unit<'_>],
    tgt: &[String],
    u: usize,
    t: usize,
    dead: &mut [Vec<bool>],
    lens: &mut [usize],
) -> bool {
    if u == units.len() {
        return t == tgt.len();
    }
    if dead[u][t] {
        return false;
    }
    let ok = match units[u] {
        Unit::Kept(tok) => t < tgt.len() && tgt[t] == tok && fit(units, tgt, u + 1, t + 1, dead, lens),
        Unit::Span { len, exact } => {
            let lo = if exact { len } else { 0 };
            (lo..=len).any(|l| {
                t + l <= tgt.len() && !tgt[t..t + l].iter().any(|x| is_sentinel(x)) && {
                    lens[u] = l;
                    fit(units, tgt, u + 1, t + l, dead, lens)
                }
            })
        }
    };
    if !ok {
        dead[u][t] = true;
    }
    ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::align;
    use crate::realize::{chain_to_skeleton, daisy_chain};
    use crate::text::tokenize;

    fn masked_for(src: &str, tgt: &str, cfg: &AlignmentConfig) -> MaskedSeq {
        let source = tokenize(src);
        let plan = align(&source, &tokenize(tgt), cfg).into_plan().unwrap();
        let chain = daisy_chain(&plan).unwrap();
        let sk = chain_to_skeleton(&chain, &plan, &source).unwrap();
        build_insertion_input(&sk, cfg).unwrap()
    }

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    const SRC: &str = "The big very loud cat";
    const TGT: &str = "The noisy large cat";

    #[test]
    fn masking_input_and_labels() {
        let cfg = AlignmentConfig::default();
        let m = masked_for(SRC, TGT, &cfg);
        assert_eq!(
            m.tokens.0,
            strs(&["The", "[REPL]", "big", "very", "loud", "[/REPL]", "[MASK]", "[MASK]", "cat"])
        );
        assert_eq!(m.mask_positions, vec![6, 7]);
        let gold = oracle_insertions(&m, &tokenize(TGT)).unwrap();
        assert_eq!(gold, strs(&["noisy", "large"]));
        assert_eq!(apply_insertion(&m, &gold).unwrap(), tokenize(TGT));
    }

    #[test]
    fn infilling_input_and_labels() {
        let cfg = AlignmentConfig {
            mode: InsertionMode::Infilling,
            max_span: 4,
            pointing: true,
        };
        let m = masked_for(SRC, TGT, &cfg);
        assert_eq!(
            m.tokens.0,
            strs(&[
                "The", "[REPL]", "big", "very", "loud", "[/REPL]", "[MASK]", "[MASK]", "[MASK]", "[MASK]",
                "cat"
            ])
        );
        let gold = oracle_insertions(&m, &tokenize(TGT)).unwrap();
        assert_eq!(gold, strs(&["noisy", "large", "[PAD]", "[PAD]"]));
        assert_eq!(apply_insertion(&m, &gold).unwrap(), tokenize(TGT));
    }

    #[test]
    fn identity_has_no_masks() {
        let cfg = AlignmentConfig::default();
        let m = masked_for("a b c", "a b c", &cfg);
        assert_eq!(m.tokens, tokenize("a b c"));
        assert!(m.mask_positions.is_empty());
        assert!(oracle_insertions(&m, &tokenize("a b c")).unwrap().is_empty());
        assert_eq!(apply_insertion(&m, &[]).unwrap(), tokenize("a b c"));
    }

    #[test]
    fn all_pad_predictions_leave_kept_tokens() {
        let cfg = AlignmentConfig {
            mode: InsertionMode::Infilling,
            max_span: 4,
            pointing: true,
        };
        let m = masked_for(SRC, TGT, &cfg);
        let pads = vec![PAD.to_string(); 4];
        assert_eq!(apply_insertion(&m, &pads).unwrap(), tokenize("The cat"));
    }

    #[test]
    fn structural_sentinel_predictions_are_rejected() {
        let m = masked_for(SRC, TGT, &AlignmentConfig::default());
        let err = apply_insertion(&m, &strs(&["noisy", "[MASK]"])).unwrap_err();
        assert!(matches!(err, Error::Sentinel(_)));
        let err = apply_insertion(&m, &strs(&["noisy"])).unwrap_err();
        assert!(matches!(err, Error::PredictionCount { expected: 2, got: 1 }));
    }

    #[test]
    fn mode_mismatch_is_an_error() {
        let source = tokenize(SRC);
        let plan = align(&source, &tokenize(TGT), &AlignmentConfig::default())
            .into_plan()
            .unwrap();
        let sk = chain_to_skeleton(&daisy_chain(&plan).unwrap(), &plan, &source).unwrap();
        let cfg = AlignmentConfig {
            mode: InsertionMode::Infilling,
            ..AlignmentConfig::default()
        };
        assert!(matches!(
            build_insertion_input(&sk, &cfg),
            Err(Error::ModeMismatch(_))
        ));
    }

    #[test]
    fn insertions_on_several_edges_stay_separate() {
        let cfg = AlignmentConfig::default();
        let m = masked_for("a b c", "x a b y c z", &cfg);
        assert_eq!(m.spans.len(), 3);
        assert_eq!(m.tokens.0, strs(&["[MASK]", "a", "b", "[MASK]", "c", "[MASK]"]));
        let gold = oracle_insertions(&m, &tokenize("x a b y c z")).unwrap();
        assert_eq!(gold, strs(&["x", "y", "z"]));
    }

    #[test]
    fn oracle_rejects_inconsistent_target() {
        let m = masked_for(SRC, TGT, &AlignmentConfig::default());
        assert!(matches!(
            oracle_insertions(&m, &tokenize("The noisy cat")),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn oracle_handles_repeated_words() {
        let cfg = AlignmentConfig {
            mode: InsertionMode::Infilling,
            max_span: 3,
            pointing: false,
        };
        let m = masked_for("a", "a a", &cfg);
        let gold = oracle_insertions(&m, &tokenize("a a")).unwrap();
        assert_eq!(apply_insertion(&m, &gold).unwrap(), tokenize("a a"));
    }
}
