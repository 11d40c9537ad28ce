//! Shared helpers for the integration tests: finite-difference gradient
//! checking and synthetic corpora.

#![allow(dead_code)]

use felix::models::tensor::Mat;
use felix::models::Params;
use felix::text::TokenSeq;
use rand::seq::IndexedRandom;
use rand::Rng;

pub const EPS: f64 = 1e-4;

/// Gradients below this magnitude are compared absolutely: central
/// differences cannot resolve them relative to rounding noise.
pub const GRAD_FLOOR: f64 = 1e-7;

#[derive(Debug, Default, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Compares `grad` (analytic) with central differences of `loss` for every
/// element of every parameter tensor of `model`.
pub fn check_gradients<P: Params + Clone>(model: &P, grad: &P, loss: impl Fn(&P) -> f64) -> GradCheck {
    let analytic: Vec<(String, Mat)> = grad
        .named_params()
        .into_iter()
        .map(|(n, m)| (n, m.clone()))
        .collect();
    let mut out = GradCheck::default();
    let mut probe = model.clone();
    for (t, (name, g)) in analytic.iter().enumerate() {
        for e in 0..g.data.len() {
            let shift = |m: &mut P, delta: f64| {
                let mut i = 0;
                m.visit_mut("", &mut |_, mat| {
                    if i == t {
                        mat.data[e] += delta;
                    }
                    i += 1;
                });
            };
            shift(&mut probe, EPS);
            let up = loss(&probe);
            shift(&mut probe, -2.0 * EPS);
            let down = loss(&probe);
            shift(&mut probe, EPS);
            let numeric = (up - down) / (2.0 * EPS);
            let err = rel_error(g.data[e], numeric);
            out.checked += 1;
            if err > out.max_rel_error {
                out.max_rel_error = err;
                out.worst = format!("{name}[{e}]: analytic {} numeric {numeric}", g.data[e]);
            }
        }
    }
    out
}

/// Adds uniform noise to every parameter so that layer-norm gains and
/// biases are exercised away from their initial values.
pub fn jitter<P: Params>(model: &mut P, rng: &mut impl Rng, scale: f64) {
    model.visit_mut("", &mut |_, m| {
        for x in &mut m.data {
            *x += rng.random_range(-scale..scale);
        }
    });
}

pub fn words(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("w{i}")).collect()
}

pub fn seq(tokens: &[&str]) -> TokenSeq {
    TokenSeq(tokens.iter().map(|s| s.to_string()).collect())
}

/// A random edit pair: a source over `vocab`, then a target built by
/// deleting, reordering and inserting runs of up to `max_ins` new tokens.
pub fn random_pair(
    rng: &mut impl Rng,
    vocab: &[String],
    max_len: usize,
    max_ins: usize,
) -> (TokenSeq, TokenSeq) {
    let n = rng.random_range(1..=max_len);
    let source: Vec<String> = (0..n).map(|_| vocab.choose(rng).unwrap().clone()).collect();
    let mut kept: Vec<String> = source.iter().filter(|_| rng.random_bool(0.7)).cloned().collect();
    if kept.len() > 1 && rng.random_bool(0.5) {
        let i = rng.random_range(0..kept.len());
        let j = rng.random_range(0..kept.len());
        let tok = kept.remove(i);
        kept.insert(j, tok);
    }
    let mut target = Vec::new();
    for slot in 0..=kept.len() {
        if rng.random_bool(0.3) {
            let k = rng.random_range(1..=max_ins);
            target.extend((0..k).map(|_| vocab.choose(rng).unwrap().clone()));
        }
        if slot < kept.len() {
            target.push(kept[slot].clone());
        }
    }
    (TokenSeq(source), TokenSeq(target))
}

/// Applies the fixed edit rules used by the learnability corpus:
/// `very` is dropped, `big` becomes `large`, `loud` moves to the end of
/// the sentence and a sentence starting with `and` gets `so` in front.
pub fn apply_rules(source: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut moved = Vec::new();
    for tok in source {
        match tok.as_str() {
            "very" => {}
            "big" => out.push("large".into()),
            "loud" => moved.push(tok.clone()),
            _ => out.push(tok.clone()),
        }
    }
    out.extend(moved);
    if source.first().map(String::as_str) == Some("and") {
        out.insert(0, "so".into());
    }
    out
}

/// `n` distinct sources over a small vocabulary, edited by [`apply_rules`].
pub fn rule_corpus(rng: &mut impl Rng, n: usize) -> Vec<(TokenSeq, TokenSeq)> {
    let content = ["the", "cat", "dog", "sat", "ran", "on", "a", "mat", "home", "red"];
    let special = ["very", "big", "loud", "and"];
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.random_range(3..=7);
        let src: Vec<String> = (0..len)
            .map(|_| {
                if rng.random_bool(0.3) {
                    special.choose(rng).unwrap().to_string()
                } else {
                    content.choose(rng).unwrap().to_string()
                }
            })
            .collect();
        if !seen.insert(src.clone()) {
            continue;
        }
        let tgt = apply_rules(&src);
        out.push((TokenSeq(src), TokenSeq(tgt)));
    }
    out
}
