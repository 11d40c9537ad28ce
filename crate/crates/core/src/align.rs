//! Training-target construction: turn a `(source, target)` pair into an
//! [`EditPlan`].
//!
//! With pointing enabled the target is scanned left to right. Each target
//! token is matched, in order of preference, to the source token right after
//! the previously kept one, to the unused source token that starts the
//! longest contiguous match with the upcoming target tokens (lowest index on
//! ties), or else becomes part of an insertion span. This keeps every source
//! token that can be kept at all, favours contiguous source runs and only
//! reorders when needed.
//!
//! With pointing disabled kept tokens must stay in source order, so the kept
//! set is a longest common subsequence of source and target.
//!
//! Every run of unmatched target tokens becomes one insertion on the chain
//! edge where it occurs. The insertion tag is carried by the last deleted
//! token that directly follows the edge's left token in the source (so the
//! deleted run can be shown to the insertion model as the replaced text), or
//! by the left token itself when no deleted token follows it.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::edit::{Base, EditPlan, Insertion, InsertionMode, Tag};
use crate::text::TokenSeq;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    pub mode: InsertionMode,
    /// Longest insertion span that can be represented. `usize::MAX` means
    /// unbounded (useful for coverage statistics only).
    pub max_span: usize,
    /// `false` disables reordering (kept tokens stay in source order).
    pub pointing: bool,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            mode: InsertionMode::Masking,
            max_span: 8,
            pointing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UnalignableReason {
    InsertionSpanTooLong,
    Other(String),
}

impl fmt::Display for UnalignableReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnalignableReason::InsertionSpanTooLong => f.write_str("InsertionSpanTooLong"),
            UnalignableReason::Other(s) => write!(f, "Other({s})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AlignmentOutcome {
    Plan(EditPlan),
    Unalignable(UnalignableReason),
}

impl AlignmentOutcome {
    pub fn plan(&self) -> Option<&EditPlan> {
        match self {
            AlignmentOutcome::Plan(p) => Some(p),
            AlignmentOutcome::Unalignable(_) => None,
        }
    }

    pub fn into_plan(self) -> Option<EditPlan> {
        match self {
            AlignmentOutcome::Plan(p) => Some(p),
            AlignmentOutcome::Unalignable(_) => None,
        }
    }
}

/// Kept source positions in output order plus the target tokens inserted
/// after each of them (index 0 is `[CLS]`).
struct Matching {
    chain: Vec<usize>,
    slots: Vec<Vec<usize>>,
}

pub fn align(source: &TokenSeq, target: &TokenSeq, cfg: &AlignmentConfig) -> AlignmentOutcome {
    if let Some(s) = source.first_sentinel().or(target.first_sentinel()) {
        return AlignmentOutcome::Unalignable(UnalignableReason::Other(format!("sentinel `{s}` in input")));
    }
    if cfg.max_span == 0 {
        return AlignmentOutcome::Unalignable(UnalignableReason::Other("max_span must be at least 1".into()));
    }
    let matching = if cfg.pointing {
        greedy_pointing(source.as_slice(), target.as_slice())
    } else {
        ordered_lcs(source.as_slice(), target.as_slice())
    };
    build_plan(source.len(), &matching, cfg)
}

fn greedy_pointing(src: &[String], tgt: &[String]) -> Matching {
    let n = src.len();
    // Position p (1-based) holds src[p - 1].
    let at = |p: usize| &src[p - 1];
    let mut used = vec![false; n + 2];
    let mut chain = vec![0];
    let mut slots = vec![Vec::new(); n + 1];
    let mut pending = Vec::new();
    let mut cursor = 0;

    for (t, tok) in tgt.iter().enumerate() {
        let next = cursor + 1;
        let choice = if next <= n && !used[next] && at(next) == tok {
            Some(next)
        } else {
            let run_len = |p: usize| {
                let mut j = 0;
                while p + j <= n && !used[p + j] && t + j < tgt.len() && *at(p + j) == tgt[t + j] {
                    j += 1;
                }
                j
            };
            let mut best: Option<(usize, usize)> = None;
            for (p, &taken) in used.iter().enumerate().take(n + 1).skip(1) {
                if taken || at(p) != tok {
                    continue;
                }
                let len = run_len(p);
                if best.is_none_or(|(_, l)| len > l) {
                    best = Some((p, len));
                }
            }
            best.map(|(p, _)| p)
        };
        match choice {
            Some(p) => {
                slots[cursor].append(&mut pending);
                used[p] = true;
                chain.push(p);
                cursor = p;
            }
            None => pending.push(t),
        }
    }
    slots[cursor].append(&mut pending);
    Matching { chain, slots }
}

fn ordered_lcs(src: &[String], tgt: &[String]) -> Matching {
    let (n, m) = (src.len(), tgt.len());
    // lcs[i][j]: LCS length of src[i..] and tgt[j..].
    let mut lcs = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if src[i] == tgt[j] {
                lcs[i + 1][j + 1] + 1
            } else {
                lcs[i + 1][j].max(lcs[i][j + 1])
            };
        }
    }
    let mut chain = vec![0];
    let mut slots = vec![Vec::new(); n + 1];
    let mut last = 0;
    let (mut i, mut j) = (0, 0);
    while j < m {
        if i < n && src[i] == tgt[j] && lcs[i][j] == lcs[i + 1][j + 1] + 1 {
            chain.push(i + 1);
            last = i + 1;
            i += 1;
            j += 1;
        } else if i < n && lcs[i + 1][j] == lcs[i][j] {
            i += 1;
        } else {
            slots[last].push(j);
            j += 1;
        }
    }
    Matching { chain, slots }
}

fn build_plan(n: usize, matching: &Matching, cfg: &AlignmentConfig) -> AlignmentOutcome {
    let mut tags = vec![Tag::DELETE; n];
    let mut pointers = vec![None; n + 1];
    for w in matching.chain.windows(2) {
        pointers[w[0]] = Some(w[1]);
    }
    for &p in &matching.chain[1..] {
        tags[p - 1].base = Base::Keep;
    }
    let mut plan = EditPlan {
        tags,
        cls_insertion: Insertion::None,
        pointers,
    };
    for &p in &matching.chain {
        let len = matching.slots[p].len();
        if len == 0 {
            continue;
        }
        if len > cfg.max_span {
            return AlignmentOutcome::Unalignable(UnalignableReason::InsertionSpanTooLong);
        }
        let ins = match cfg.mode {
            InsertionMode::Masking => Insertion::Count(len),
            InsertionMode::Infilling => Insertion::Generic,
        };
        let run = plan.trailing_deleted(p);
        if !run.is_empty() {
            plan.tags[run.end - 2].insertion = ins;
        } else if p == 0 {
            plan.cls_insertion = ins;
        } else {
            plan.tags[p - 1].insertion = ins;
        }
    }
    debug_assert!(plan.validate().is_ok());
    AlignmentOutcome::Plan(plan)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentStats {
    pub pairs: usize,
    pub aligned: usize,
    pub skipped: BTreeMap<String, usize>,
    pub kept_tokens: usize,
    pub mask_tokens: usize,
    pub target_tokens: usize,
    pub coverage_percent: f64,
    pub mask_percent: f64,
}

/// Coverage and MASK ratio over a corpus. The MASK ratio is computed over
/// the alignable pairs only.
pub fn alignment_stats<'a>(
    corpus: impl IntoIterator<Item = (&'a TokenSeq, &'a TokenSeq)>,
    cfg: &AlignmentConfig,
) -> AlignmentStats {
    let mut stats = AlignmentStats::default();
    for (src, tgt) in corpus {
        stats.pairs += 1;
        match align(src, tgt, cfg) {
            AlignmentOutcome::Plan(plan) => {
                let kept = plan.kept_positions().count();
                stats.aligned += 1;
                stats.kept_tokens += kept;
                stats.mask_tokens += tgt.len() - kept;
                stats.target_tokens += tgt.len();
            }
            AlignmentOutcome::Unalignable(reason) => {
                *stats.skipped.entry(reason.to_string()).or_default() += 1;
            }
        }
    }
    stats.coverage_percent = percent(stats.aligned, stats.pairs);
    stats.mask_percent = percent(stats.mask_tokens, stats.target_tokens);
    stats
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}
