//! Turning pointers into an output order.
//!
//! Gold pointers are followed directly from `[CLS]` ([`daisy_chain`]).
//! Predicted pointer distributions go through a beam search that never
//! revisits a position ([`beam_realize`]), so a loop cannot form.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::edit::{EditPlan, Insertion, Tag};
use crate::text::TokenSeq;
use crate::{Error, Result};

/// Row-stochastic pointer distributions over positions `0..=n`
/// (`[CLS]` included). Row `i` is the distribution of the token following
/// position `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointerScores {
    size: usize,
    probs: Vec<f64>,
}

impl PointerScores {
    /// Wraps a square matrix of probabilities. Rows must be finite,
    /// non-negative and sum to 1 within `1e-6`.
    pub fn from_probabilities(rows: Vec<Vec<f64>>) -> Result<Self> {
        let size = rows.len();
        let mut probs = Vec::with_capacity(size * size);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != size {
                return Err(Error::Shape(format!(
                    "pointer row {i} has {} entries, expected {size}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Shape(format!("pointer row {i} is not a distribution")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Shape(format!("pointer row {i} sums to {sum}")));
            }
            probs.extend(row);
        }
        Ok(PointerScores { size, probs })
    }

    /// Row-wise softmax of raw scores.
    pub fn from_logits(rows: &[Vec<f64>]) -> Result<Self> {
        let probs = rows
            .iter()
            .map(|row| {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                exps.into_iter().map(|e| e / z).collect()
            })
            .collect();
        Self::from_probabilities(probs)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.probs[from * self.size + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.probs[from * self.size..(from + 1) * self.size]
    }
}

/// Realized output order: `[CLS]` (position 0) followed by every kept
/// position exactly once.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Chain(pub Vec<usize>);

impl Chain {
    pub fn positions(&self) -> &[usize] {
        &self.0
    }

    /// Kept positions in output order, without `[CLS]`.
    pub fn kept(&self) -> &[usize] {
        &self.0[1..]
    }

    /// Pointer map over `0..=n` with the chain's edges.
    pub fn to_pointers(&self, n: usize) -> Vec<Option<usize>> {
        let mut pointers = vec![None; n + 1];
        for w in self.0.windows(2) {
            pointers[w[0]] = Some(w[1]);
        }
        pointers
    }

    /// Source order of the kept positions (no reordering).
    pub fn source_order(tags: &[Tag]) -> Chain {
        let mut chain = vec![0];
        chain.extend((1..=tags.len()).filter(|&p| tags[p - 1].is_keep()));
        Chain(chain)
    }
}

/// Follows the plan's pointers from `[CLS]`.
pub fn daisy_chain(plan: &EditPlan) -> Result<Chain> {
    let n = plan.source_len();
    if plan.pointers.len() != n + 1 {
        return Err(Error::Plan(format!(
            "expected {} pointer slots, got {}",
            n + 1,
            plan.pointers.len()
        )));
    }
    let mut seen = vec![false; n + 1];
    seen[0] = true;
    let mut chain = vec![0];
    let mut cur = 0;
    while let Some(next) = plan.pointers[cur] {
        if next == 0 || next > n {
            return Err(Error::Plan(format!("pointer {cur} -> {next} out of range")));
        }
        if std::mem::replace(&mut seen[next], true) {
            return Err(Error::Cycle(next));
        }
        if !plan.is_kept(next) {
            return Err(Error::Plan(format!(
                "pointer {cur} -> {next} targets a deleted token"
            )));
        }
        chain.push(next);
        cur = next;
    }
    if let Some(p) = plan.kept_positions().find(|&p| !seen[p]) {
        return Err(Error::Unreachable(p));
    }
    Ok(Chain(chain))
}

#[derive(Debug, Clone)]
struct Hypothesis {
    chain: Vec<usize>,
    visited: Vec<bool>,
    log_prob: f64,
}

fn by_score(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then_with(|| a.chain.cmp(&b.chain))
}

/// Constrained beam search over chains that start at `[CLS]` and visit each
/// `KEEP` position exactly once. A chain scores the sum of log pointer
/// probabilities along its edges. Ties go to the lexicographically smaller
/// chain.
pub fn beam_realize(scores: &PointerScores, tags: &[Tag], beam_size: usize) -> Result<Chain> {
    let n = tags.len();
    if scores.size() != n + 1 {
        return Err(Error::Shape(format!(
            "pointer scores are {0}x{0}, expected {1}x{1}",
            scores.size(),
            n + 1
        )));
    }
    let beam_size = beam_size.max(1);
    let kept: Vec<usize> = (1..=n).filter(|&p| tags[p - 1].is_keep()).collect();
    let mut beam = vec![Hypothesis {
        chain: vec![0],
        visited: vec![false; n + 1],
        log_prob: 0.0,
    }];
    for _ in 0..kept.len() {
        let mut next = Vec::with_capacity(beam.len() * kept.len());
        for hyp in &beam {
            let last = *hyp.chain.last().unwrap();
            for &p in kept.iter().filter(|&&p| !hyp.visited[p]) {
                let mut h = hyp.clone();
                h.chain.push(p);
                h.visited[p] = true;
                h.log_prob += scores.prob(last, p).ln();
                next.push(h);
            }
        }
        if next.is_empty() {
            let best = beam.into_iter().next().map(|h| h.chain).unwrap_or_default();
            return Err(Error::BeamExhausted(best));
        }
        next.sort_by(by_score);
        next.truncate(beam_size);
        beam = next;
    }
    Ok(Chain(beam.swap_remove(0).chain))
}

/// Sum of log pointer probabilities along the chain.
pub fn chain_log_prob(scores: &PointerScores, chain: &Chain) -> f64 {
    chain.0.windows(2).map(|w| scores.prob(w[0], w[1]).ln()).sum()
}

/// Whether following each row's argmax from `[CLS]`, restricted to kept
/// positions but without the visited constraint, would revisit a position.
pub fn greedy_would_loop(scores: &PointerScores, tags: &[Tag]) -> bool {
    let kept: Vec<usize> = (1..=tags.len()).filter(|&p| tags[p - 1].is_keep()).collect();
    let mut seen = vec![false; tags.len() + 1];
    let mut cur = 0;
    for _ in 0..kept.len() {
        let next = kept.iter().copied().filter(|&p| p != cur).max_by(|&a, &b| {
            scores
                .prob(cur, a)
                .total_cmp(&scores.prob(cur, b))
                .then(b.cmp(&a))
        });
        let Some(next) = next else { return false };
        if std::mem::replace(&mut seen[next], true) {
            return true;
        }
        cur = next;
    }
    false
}

/// Kept tokens in output order, interleaved with pending insertion slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkeletonItem {
    Token(String),
    Slot {
        /// Deleted source tokens being replaced by this insertion.
        replaced: Vec<String>,
        insertion: SlotKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotKind {
    Count(usize),
    Generic,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Skeleton(pub Vec<SkeletonItem>);

impl Skeleton {
    /// Flat rendering with `⟨INS:k⟩` / `⟨INS⟩` markers for the slots.
    pub fn markers(&self) -> TokenSeq {
        self.0
            .iter()
            .map(|item| match item {
                SkeletonItem::Token(t) => t.clone(),
                SkeletonItem::Slot {
                    insertion: SlotKind::Count(k),
                    ..
                } => format!("⟨INS:{k}⟩"),
                SkeletonItem::Slot {
                    insertion: SlotKind::Generic,
                    ..
                } => "⟨INS⟩".to_string(),
            })
            .collect()
    }

    pub fn kept_tokens(&self) -> TokenSeq {
        self.0
            .iter()
            .filter_map(|item| match item {
                SkeletonItem::Token(t) => Some(t.clone()),
                SkeletonItem::Slot { .. } => None,
            })
            .collect()
    }
}

impl fmt::Display for Skeleton {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.markers().fmt(f)
    }
}

/// Lays out kept tokens in chain order. Each kept position (and `[CLS]`)
/// owns the slot right after it: if its own tag, or any tag in the deleted
/// run that follows it in the source, requests an insertion, the slot is
/// emitted with that deleted run as the replaced text. Several requests on
/// one slot are merged (counts add up).
pub fn chain_to_skeleton(chain: &Chain, plan: &EditPlan, source: &TokenSeq) -> Result<Skeleton> {
    let n = plan.source_len();
    if source.len() != n {
        return Err(Error::Plan(format!(
            "plan covers {n} tokens but source has {}",
            source.len()
        )));
    }
    check_chain(chain, plan)?;
    let mut items = Vec::new();
    for &pos in chain.positions() {
        if pos != 0 {
            items.push(SkeletonItem::Token(source[pos - 1].clone()));
        }
        let run = plan.trailing_deleted(pos);
        let requests = std::iter::once(plan.tag_at(pos).insertion)
            .chain(run.clone().map(|p| plan.tags[p - 1].insertion));
        let mut merged: Option<SlotKind> = None;
        for ins in requests {
            merged = match (merged, ins) {
                (m, Insertion::None) => m,
                (None, Insertion::Count(k)) => Some(SlotKind::Count(k)),
                (Some(SlotKind::Count(a)), Insertion::Count(b)) => Some(SlotKind::Count(a + b)),
                (None | Some(SlotKind::Generic), Insertion::Generic) => Some(SlotKind::Generic),
                _ => {
                    return Err(Error::ModeMismatch(format!(
                        "slot after position {pos} mixes INS and INS_k"
                    )))
                }
            };
        }
        if let Some(kind) = merged {
            items.push(SkeletonItem::Slot {
                replaced: run.map(|p| source[p - 1].clone()).collect(),
                insertion: kind,
            });
        }
    }
    Ok(Skeleton(items))
}

fn check_chain(chain: &Chain, plan: &EditPlan) -> Result<()> {
    let n = plan.source_len();
    if chain.0.first() != Some(&0) {
        return Err(Error::Plan("chain must start at [CLS]".into()));
    }
    let mut seen = vec![false; n + 1];
    for &p in chain.kept() {
        if p == 0 || p > n || !plan.is_kept(p) {
            return Err(Error::Plan(format!("chain visits non-kept position {p}")));
        }
        if std::mem::replace(&mut seen[p], true) {
            return Err(Error::Cycle(p));
        }
    }
    if let Some(p) = plan.kept_positions().find(|&p| !seen[p]) {
        return Err(Error::Unreachable(p));
    }
    Ok(())
}
