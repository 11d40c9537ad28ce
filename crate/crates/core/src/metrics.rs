//! Evaluation metrics over whitespace tokens.
//!
//! Corpus-level functions take one prediction per example and a list of
//! references per example. Every score is a percentage.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::text::TokenSeq;
use crate::{Error, Result};

const MAX_ORDER: usize = 4;

/// Longest block a single TER shift may move.
pub const TER_MAX_SHIFT: usize = 10;

type Counts<'a> = BTreeMap<&'a [String], usize>;

fn ngram_counts(tokens: &[String], n: usize) -> Counts<'_> {
    let mut counts = Counts::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_default() += 1;
        }
    }
    counts
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p > 0.0 || r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SariVariant {
    /// ADD and KEEP are F1 scores, DEL is precision.
    #[default]
    Original,
    /// All three components are F1 scores.
    AllF1,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Sari {
    pub sari: f64,
    pub add: f64,
    pub keep: f64,
    pub del: f64,
}

/// Keep, delete and add scores for one n-gram order. Source n-gram counts
/// and prediction counts are scaled by the number of references; empty
/// sets score 0.
fn sari_order(
    source: &[String],
    prediction: &[String],
    references: &[TokenSeq],
    n: usize,
    variant: SariVariant,
) -> (f64, f64, f64) {
    let num_refs = references.len();
    let s = ngram_counts(source, n);
    let c = ngram_counts(prediction, n);
    let mut r = Counts::new();
    for reference in references {
        for (g, k) in ngram_counts(reference.as_slice(), n) {
            *r.entry(g).or_default() += k;
        }
    }
    let get = |m: &Counts<'_>, g: &[String]| m.get(g).copied().unwrap_or(0);

    // KEEP: n-grams of the source that survive, weighted per reference.
    let (mut keep_p, mut keep_r, mut keep_n, mut keep_all_n) = (0.0, 0.0, 0usize, 0usize);
    for (g, &sc) in &s {
        let s_rep = sc * num_refs;
        let c_rep = get(&c, g) * num_refs;
        let rc = get(&r, g);
        let all = s_rep.min(rc);
        if all > 0 {
            keep_all_n += 1;
        }
        let kept = s_rep.min(c_rep);
        if kept > 0 {
            let good = kept.min(rc);
            keep_p += good as f64 / kept as f64;
            if all > 0 {
                keep_r += good as f64 / all as f64;
            }
            keep_n += 1;
        }
    }
    let keep = f1(ratio(keep_p, keep_n as f64), ratio(keep_r, keep_all_n as f64));

    // DEL: n-grams of the source that were removed.
    let (mut del_p, mut del_r, mut del_n, mut del_all_n) = (0.0, 0.0, 0usize, 0usize);
    for (g, &sc) in &s {
        let s_rep = sc * num_refs;
        let c_rep = get(&c, g) * num_refs;
        let rc = get(&r, g);
        let all = s_rep.saturating_sub(rc);
        if all > 0 {
            del_all_n += 1;
        }
        let deleted = s_rep.saturating_sub(c_rep);
        if deleted > 0 {
            let good = deleted.saturating_sub(rc);
            del_p += good as f64 / deleted as f64;
            if all > 0 {
                del_r += good as f64 / all as f64;
            }
            del_n += 1;
        }
    }
    let del_precision = ratio(del_p, del_n as f64);
    let del = match variant {
        SariVariant::Original => del_precision,
        SariVariant::AllF1 => f1(del_precision, ratio(del_r, del_all_n as f64)),
    };

    // ADD: n-grams of the prediction absent from the source (as sets).
    let added = c.keys().filter(|g| !s.contains_key(*g)).count();
    let added_good = c
        .keys()
        .filter(|g| !s.contains_key(*g) && r.contains_key(*g))
        .count();
    let addable = r.keys().filter(|g| !s.contains_key(*g)).count();
    let add = f1(
        ratio(added_good as f64, added as f64),
        ratio(added_good as f64, addable as f64),
    );
    (keep, del, add)
}

/// Sentence-level SARI averaged over n-gram orders 1 to 4.
pub fn sari(
    source: &TokenSeq,
    prediction: &TokenSeq,
    references: &[TokenSeq],
    variant: SariVariant,
) -> Result<Sari> {
    if references.is_empty() {
        return Err(Error::Metric("SARI needs at least one reference".into()));
    }
    let (mut keep, mut del, mut add) = (0.0, 0.0, 0.0);
    for n in 1..=MAX_ORDER {
        let (k, d, a) = sari_order(source.as_slice(), prediction.as_slice(), references, n, variant);
        keep += k;
        del += d;
        add += a;
    }
    let order = MAX_ORDER as f64;
    let (keep, del, add) = (keep / order, del / order, add / order);
    Ok(Sari {
        sari: 100.0 * (keep + del + add) / 3.0,
        add: 100.0 * add,
        keep: 100.0 * keep,
        del: 100.0 * del,
    })
}

/// Mean sentence SARI over a corpus.
pub fn corpus_sari(
    sources: &[TokenSeq],
    predictions: &[TokenSeq],
    references: &[Vec<TokenSeq>],
    variant: SariVariant,
) -> Result<Sari> {
    check_lengths(predictions.len(), sources.len(), "sources")?;
    check_lengths(predictions.len(), references.len(), "reference lists")?;
    if predictions.is_empty() {
        return Err(Error::Metric("empty corpus".into()));
    }
    let mut total = Sari::default();
    for ((s, p), refs) in sources.iter().zip(predictions).zip(references) {
        let one = sari(s, p, refs, variant)?;
        total.sari += one.sari;
        total.add += one.add;
        total.keep += one.keep;
        total.del += one.del;
    }
    let n = predictions.len() as f64;
    Ok(Sari {
        sari: total.sari / n,
        add: total.add / n,
        keep: total.keep / n,
        del: total.del / n,
    })
}

fn check_lengths(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Metric(format!("{a} predictions but {b} {what}")));
    }
    Ok(())
}

/// Percentage of predictions equal to their reference after whitespace
/// normalization.
pub fn exact<S: AsRef<str>>(predictions: &[S], references: &[S]) -> Result<f64> {
    check_lengths(predictions.len(), references.len(), "references")?;
    if predictions.is_empty() {
        return Err(Error::Metric("empty corpus".into()));
    }
    let hits = predictions
        .iter()
        .zip(references)
        .filter(|(p, r)| p.as_ref().split_whitespace().eq(r.as_ref().split_whitespace()))
        .count();
    Ok(100.0 * hits as f64 / predictions.len() as f64)
}

/// Percentage of predictions identical to their source.
pub fn copy_rate(sources: &[TokenSeq], predictions: &[TokenSeq]) -> Result<f64> {
    check_lengths(predictions.len(), sources.len(), "sources")?;
    if predictions.is_empty() {
        return Err(Error::Metric("empty corpus".into()));
    }
    let same = sources.iter().zip(predictions).filter(|(s, p)| s == p).count();
    Ok(100.0 * same as f64 / predictions.len() as f64)
}

/// Corpus BLEU-4 with brevity penalty. Orders 2 to 4 with no matches at all
/// are smoothed to `1 / (total + 1)`; a zero unigram precision yields 0.
pub fn bleu4(predictions: &[TokenSeq], references: &[Vec<TokenSeq>]) -> Result<f64> {
    check_lengths(predictions.len(), references.len(), "reference lists")?;
    if predictions.is_empty() {
        return Err(Error::Metric("empty corpus".into()));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (pred, refs) in predictions.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::Metric("BLEU needs at least one reference".into()));
        }
        hyp_len += pred.len();
        ref_len += closest_length(pred.len(), refs);
        for n in 1..=MAX_ORDER {
            let hyp = ngram_counts(pred.as_slice(), n);
            let mut max_ref = Counts::new();
            for r in refs {
                for (g, k) in ngram_counts(r.as_slice(), n) {
                    let e = max_ref.entry(g).or_default();
                    *e = (*e).max(k);
                }
            }
            for (g, k) in hyp {
                totals[n - 1] += k;
                matches[n - 1] += k.min(max_ref.get(g).copied().unwrap_or(0));
            }
        }
    }
    if hyp_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..MAX_ORDER {
        let p = if matches[n] == 0 {
            1.0 / (totals[n] as f64 + 1.0)
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_sum += p.ln();
    }
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * bp * (log_sum / MAX_ORDER as f64).exp())
}

fn closest_length(len: usize, refs: &[TokenSeq]) -> usize {
    refs.iter()
        .map(TokenSeq::len)
        .min_by_key(|&r| (r.abs_diff(len), r))
        .unwrap_or(0)
}

pub(crate) fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn rouge_l_pair(pred: &[String], reference: &[String]) -> f64 {
    if pred.is_empty() && reference.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(pred, reference) as f64;
    f1(lcs / pred.len() as f64, lcs / reference.len() as f64)
}

/// Mean per-sentence ROUGE-L F1 (best reference per sentence).
pub fn rouge_l(predictions: &[TokenSeq], references: &[Vec<TokenSeq>]) -> Result<f64> {
    check_lengths(predictions.len(), references.len(), "reference lists")?;
    if predictions.is_empty() {
        return Err(Error::Metric("empty corpus".into()));
    }
    let mut total = 0.0;
    for (pred, refs) in predictions.iter().zip(references) {
        total += refs
            .iter()
            .map(|r| rouge_l_pair(pred.as_slice(), r.as_slice()))
            .fold(0.0, f64::max);
    }
    Ok(100.0 * total / predictions.len() as f64)
}

/// Edit operations turning a prediction into a reference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerCounts {
    /// Reference words missing from the prediction.
    pub ins: usize,
    /// Prediction words absent from the reference.
    pub del: usize,
    pub sub: usize,
    pub shift: usize,
}

impl TerCounts {
    pub fn total(&self) -> usize {
        self.ins + self.del + self.sub + self.shift
    }

    fn add(&mut self, o: &TerCounts) {
        self.ins += o.ins;
        self.del += o.del;
        self.sub += o.sub;
        self.shift += o.shift;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ter {
    pub ter: f64,
    pub counts: TerCounts,
    pub reference_len: f64,
}

fn levenshtein(a: &[String], b: &[String], row: &mut Vec<usize>) -> usize {
    row.clear();
    row.extend(0..=b.len());
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = (diag + usize::from(x != y)).min(up + 1).min(row[j] + 1);
            diag = up;
        }
    }
    row[b.len()]
}

fn edit_counts(hyp: &[String], reference: &[String]) -> TerCounts {
    let (n, m) = (hyp.len(), reference.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            d[i][j] = (d[i - 1][j - 1] + usize::from(hyp[i - 1] != reference[j - 1]))
                .min(d[i - 1][j] + 1)
                .min(d[i][j - 1] + 1);
        }
    }
    // Backtrace preferring match/substitution, then deletion, then insertion.
    let mut counts = TerCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let cost = usize::from(hyp[i - 1] != reference[j - 1]);
            if d[i][j] == d[i - 1][j - 1] + cost {
                counts.sub += cost;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            counts.del += 1;
            i -= 1;
        } else {
            counts.ins += 1;
            j -= 1;
        }
    }
    counts
}

/// Moves `block` (start, len) so that it starts at `dest` in the sequence
/// with the block removed.
pub(crate) fn apply_shift(seq: &[String], start: usize, len: usize, dest: usize) -> Vec<String> {
    let mut rest: Vec<String> = Vec::with_capacity(seq.len());
    rest.extend_from_slice(&seq[..start]);
    rest.extend_from_slice(&seq[start + len..]);
    let mut out = Vec::with_capacity(seq.len());
    out.extend_from_slice(&rest[..dest]);
    out.extend_from_slice(&seq[start..start + len]);
    out.extend_from_slice(&rest[dest..]);
    out
}

/// Shifts plus remaining edits, with at most `max_shift`-token blocks.
/// `max_shift == 0` disables shifting (plain Levenshtein).
///
/// Greedy: while some block shift lowers the edit distance, apply the one
/// that lowers it most; ties go to the earliest block start, then the
/// shortest block, then the earliest destination.
pub fn ter_counts(prediction: &[String], reference: &[String], max_shift: usize) -> TerCounts {
    let mut cur = prediction.to_vec();
    let mut row = Vec::new();
    let mut shifts = 0;
    let mut cost = levenshtein(&cur, reference, &mut row);
    loop {
        let mut best: Option<(usize, Vec<String>)> = None;
        for start in 0..cur.len() {
            for len in 1..=max_shift.min(cur.len() - start) {
                for dest in 0..=cur.len() - len {
                    if dest == start {
                        continue;
                    }
                    let shifted = apply_shift(&cur, start, len, dest);
                    let c = levenshtein(&shifted, reference, &mut row);
                    if c < best.as_ref().map_or(cost, |b| b.0) {
                        best = Some((c, shifted));
                    }
                }
            }
        }
        match best {
            Some((c, shifted)) => {
                cur = shifted;
                cost = c;
                shifts += 1;
            }
            None => break,
        }
    }
    let mut counts = edit_counts(&cur, reference);
    counts.shift = shifts;
    counts
}

/// Sentence TER against a single reference.
pub fn ter(prediction: &TokenSeq, reference: &TokenSeq) -> Result<Ter> {
    corpus_ter(
        std::slice::from_ref(prediction),
        &[vec![reference.clone()]],
        TER_MAX_SHIFT,
    )
}

/// Corpus TER: summed best-reference edits over summed average reference
/// lengths.
pub fn corpus_ter(predictions: &[TokenSeq], references: &[Vec<TokenSeq>], max_shift: usize) -> Result<Ter> {
    check_lengths(predictions.len(), references.len(), "reference lists")?;
    let mut counts = TerCounts::default();
    let mut ref_len = 0.0;
    for (pred, refs) in predictions.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::Metric("TER needs at least one reference".into()));
        }
        let best = refs
            .iter()
            .map(|r| ter_counts(pred.as_slice(), r.as_slice(), max_shift))
            .min_by_key(TerCounts::total)
            .expect("non-empty");
        counts.add(&best);
        ref_len += refs.iter().map(TokenSeq::len).sum::<usize>() as f64 / refs.len() as f64;
    }
    if ref_len == 0.0 {
        return Err(Error::Metric("TER needs a non-empty reference".into()));
    }
    Ok(Ter {
        ter: 100.0 * counts.total() as f64 / ref_len,
        counts,
        reference_len: ref_len,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerReport {
    pub ter: f64,
    pub ins: usize,
    pub del: usize,
    pub sub: usize,
    pub shift: usize,
    pub ins_rate: f64,
    pub del_rate: f64,
    pub sub_rate: f64,
    pub shift_rate: f64,
}

impl From<Ter> for TerReport {
    fn from(t: Ter) -> Self {
        let rate = |k: usize| 100.0 * k as f64 / t.reference_len;
        TerReport {
            ter: t.ter,
            ins: t.counts.ins,
            del: t.counts.del,
            sub: t.counts.sub,
            shift: t.counts.shift,
            ins_rate: rate(t.counts.ins),
            del_rate: rate(t.counts.del),
            sub_rate: rate(t.counts.sub),
            shift_rate: rate(t.counts.shift),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub examples: usize,
    pub sari_variant: SariVariant,
    pub bleu_smoothing: String,
    pub ter_max_shift: usize,
}

/// Everything `felix evaluate` reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub sari: f64,
    pub sari_add: f64,
    pub sari_keep: f64,
    pub sari_del: f64,
    pub exact: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub ter: TerReport,
    pub copy_rate: f64,
    pub metadata: ReportMetadata,
}

impl MetricReport {
    /// Scores `predictions` against `references`; `sources` feed SARI and
    /// the copy rate. Exact match uses the first reference.
    pub fn compute(
        sources: &[TokenSeq],
        predictions: &[TokenSeq],
        references: &[Vec<TokenSeq>],
        variant: SariVariant,
    ) -> Result<Self> {
        let s = corpus_sari(sources, predictions, references, variant)?;
        let firsts: Vec<String> = references
            .iter()
            .map(|r| r.first().map(|t| t.to_string()).unwrap_or_default())
            .collect();
        let preds: Vec<String> = predictions.iter().map(|p| p.to_string()).collect();
        Ok(MetricReport {
            sari: s.sari,
            sari_add: s.add,
            sari_keep: s.keep,
            sari_del: s.del,
            exact: exact(&preds, &firsts)?,
            bleu4: bleu4(predictions, references)?,
            rouge_l: rouge_l(predictions, references)?,
            ter: corpus_ter(predictions, references, TER_MAX_SHIFT)?.into(),
            copy_rate: copy_rate(sources, predictions)?,
            metadata: ReportMetadata {
                examples: predictions.len(),
                sari_variant: variant,
                bleu_smoothing: "add-one on orders 2-4 with zero matches".into(),
                ter_max_shift: TER_MAX_SHIFT,
            },
        })
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k}: {v}");
        };
        let pct = |x: f64| format!("{x:.4}");
        line("examples", self.metadata.examples.to_string());
        line("sari", pct(self.sari));
        line("sari_add", pct(self.sari_add));
        line("sari_keep", pct(self.sari_keep));
        line("sari_del", pct(self.sari_del));
        line("exact", pct(self.exact));
        line("bleu4", pct(self.bleu4));
        line("rouge_l", pct(self.rouge_l));
        line("ter", pct(self.ter.ter));
        line("ter_ins", self.ter.ins.to_string());
        line("ter_del", self.ter.del.to_string());
        line("ter_sub", self.ter.sub.to_string());
        line("ter_shift", self.ter.shift.to_string());
        line("ter_ins_rate", pct(self.ter.ins_rate));
        line("ter_del_rate", pct(self.ter.del_rate));
        line("ter_sub_rate", pct(self.ter.sub_rate));
        line("ter_shift_rate", pct(self.ter.shift_rate));
        line("copy_rate", pct(self.copy_rate));
        line(
            "sari_variant",
            match self.metadata.sari_variant {
                SariVariant::Original => "original".into(),
                SariVariant::AllF1 => "all_f1".into(),
            },
        );
        line("bleu_smoothing", self.metadata.bleu_smoothing.clone());
        line("ter_max_shift", self.metadata.ter_max_shift.to_string());
        s
    }
}
