//! Tagging model: encoder, tag head and pointer network.
//!
//! The pointer input for position `i` is an affine map of the concatenation
//! of its hidden state, the embedding of its tag and its position encoding.
//! An optional extra transformer layer runs before the query projection.
//! Pointer probabilities are `softmax(Q Kᵀ / sqrt(d_k))` row-wise.

use rand::Rng;

use super::layers::{Encoder, EncoderConfig, LayerCache, Linear, Params, TransformerLayer};
use super::tensor::{argmax, sinusoidal, softmax_rows, Mat};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tagger {
    pub encoder: Encoder,
    pub tag_head: Linear,
    pub tag_embedding: Mat,
    pub combiner: Linear,
    pub extra_layer: Option<TransformerLayer>,
    pub query: Linear,
    pub key: Linear,
}

/// One training example: token ids with `[CLS]` at 0, a gold tag id per
/// position (the `[CLS]` row carries its insertion request) and gold
/// next-position pointers.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggerExample {
    pub ids: Vec<usize>,
    pub tags: Vec<usize>,
    pub pointers: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TaggerLoss {
    pub tag: f64,
    pub pointer: f64,
}

impl TaggerLoss {
    pub fn total(&self) -> f64 {
        self.tag + self.pointer
    }
}

struct PointerCache {
    combined_in: Mat,
    h1: Mat,
    extra: Option<LayerCache>,
    query_in: Mat,
    q: Mat,
    k: Mat,
    scores: Mat,
    probs: Mat,
}

/// `log softmax(row)[i]`, computed without forming the probabilities.
pub(crate) fn log_softmax_at(row: &[f64], i: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row[i] - lse
}

/// Mean cross-entropy of `logits` rows against `gold`, and its gradient.
pub(crate) fn cross_entropy(logits: &Mat, gold: &[usize]) -> (f64, Mat) {
    let probs = softmax_rows(logits);
    let n = gold.len() as f64;
    let mut grad = probs.clone();
    let mut loss = 0.0;
    for (r, &g) in gold.iter().enumerate() {
        loss -= log_softmax_at(logits.row(r), g);
        *grad.at_mut(r, g) -= 1.0;
    }
    grad.scale(1.0 / n);
    (loss / n, grad)
}

impl Tagger {
    pub fn new(
        rng: &mut impl Rng,
        encoder: EncoderConfig,
        num_tags: usize,
        extra_layer: bool,
    ) -> Result<Self> {
        let enc = Encoder::new(rng, encoder)?;
        let d = encoder.dim;
        let bound = (3.0 / d as f64).sqrt();
        Ok(Tagger {
            encoder: enc,
            tag_head: Linear::new(rng, d, num_tags),
            tag_embedding: super::layers::uniform(rng, num_tags, d, bound),
            combiner: Linear::new(rng, 3 * d, d),
            extra_layer: extra_layer.then(|| TransformerLayer::new(rng, d, encoder.heads, encoder.ffn_dim)),
            query: Linear::new(rng, d, d),
            key: Linear::new(rng, d, d),
        })
    }

    pub fn num_tags(&self) -> usize {
        self.tag_embedding.rows
    }

    /// Encoder output `h^L`, one row per token.
    pub fn encode(&self, ids: &[usize]) -> Result<Mat> {
        Ok(self.encoder.forward(ids)?.0)
    }

    pub fn tag_logits(&self, hidden: &Mat) -> Mat {
        self.tag_head.forward(hidden)
    }

    /// Row-wise argmax of the tag logits.
    pub fn predict_tags(&self, hidden: &Mat) -> (Mat, Vec<usize>) {
        let logits = self.tag_logits(hidden);
        let tags = (0..logits.rows).map(|r| argmax(logits.row(r))).collect();
        (logits, tags)
    }

    /// Pointer probabilities given hidden states and one tag id per row.
    pub fn pointer_scores(&self, hidden: &Mat, tags: &[usize]) -> Result<Mat> {
        Ok(self.pointer_forward(hidden, tags)?.probs)
    }

    fn pointer_forward(&self, hidden: &Mat, tags: &[usize]) -> Result<PointerCache> {
        if tags.len() != hidden.rows {
            return Err(Error::Shape(format!(
                "{} tags for {} hidden rows",
                tags.len(),
                hidden.rows
            )));
        }
        if let Some(&bad) = tags.iter().find(|&&t| t >= self.num_tags()) {
            return Err(Error::Shape(format!("tag id {bad} outside the tag set")));
        }
        let tag_emb = self.tag_embedding.gather_rows(tags);
        let pos = sinusoidal(hidden.rows, hidden.cols);
        let combined_in = Mat::hcat(&[hidden, &tag_emb, &pos]);
        let h1 = self.combiner.forward(&combined_in);
        let (query_in, extra) = match &self.extra_layer {
            Some(layer) => {
                let (y, c) = layer.forward(&h1);
                (y, Some(c))
            }
            None => (h1.clone(), None),
        };
        let q = self.query.forward(&query_in);
        let k = self.key.forward(&h1);
        let mut scores = q.matmul_t(&k);
        scores.scale(1.0 / (k.cols as f64).sqrt());
        let probs = softmax_rows(&scores);
        Ok(PointerCache {
            combined_in,
            h1,
            extra,
            query_in,
            q,
            k,
            scores,
            probs,
        })
    }

    /// Loss of one example. With `grad`, gradients are accumulated into it.
    pub fn loss(&self, ex: &TaggerExample, pointing: bool, grad: Option<&mut Tagger>) -> Result<TaggerLoss> {
        if ex.tags.len() != ex.ids.len() || ex.pointers.len() != ex.ids.len() {
            return Err(Error::Shape("tagger example fields differ in length".into()));
        }
        let (hidden, enc_cache) = self.encoder.forward(&ex.ids)?;
        let logits = self.tag_logits(&hidden);
        let (tag_loss, dlogits) = cross_entropy(&logits, &ex.tags);

        let rows: Vec<(usize, usize)> = ex
            .pointers
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|j| (i, j)))
            .collect();
        let pointer_part = if pointing && !rows.is_empty() {
            Some(self.pointer_forward(&hidden, &ex.tags)?)
        } else {
            None
        };
        let mut pointer_loss = 0.0;
        let mut dscores = None;
        if let Some(cache) = &pointer_part {
            let m = rows.len() as f64;
            let mut ds = Mat::zeros(cache.probs.rows, cache.probs.cols);
            for &(i, j) in &rows {
                pointer_loss -= log_softmax_at(cache.scores.row(i), j);
                ds.row_mut(i).copy_from_slice(cache.probs.row(i));
                *ds.at_mut(i, j) -= 1.0;
            }
            ds.scale(1.0 / m);
            pointer_loss /= m;
            dscores = Some(ds);
        }
        let loss = TaggerLoss {
            tag: tag_loss,
            pointer: pointer_loss,
        };
        if !loss.total().is_finite() {
            return Err(Error::NonFinite(loss.total()));
        }
        if let Some(grad) = grad {
            let mut dhidden = self.tag_head.backward(&hidden, &dlogits, &mut grad.tag_head);
            if let (Some(cache), Some(mut ds)) = (&pointer_part, dscores) {
                self.pointer_backward(cache, &mut ds, &ex.tags, grad, &mut dhidden);
            }
            self.encoder.backward(&enc_cache, &dhidden, &mut grad.encoder);
        }
        Ok(loss)
    }

    fn pointer_backward(
        &self,
        cache: &PointerCache,
        dscores: &mut Mat,
        tags: &[usize],
        grad: &mut Tagger,
        dhidden: &mut Mat,
    ) {
        let d = dhidden.cols;
        dscores.scale(1.0 / (cache.k.cols as f64).sqrt());
        let dq = dscores.matmul(&cache.k);
        let dk = dscores.t_matmul(&cache.q);
        let dquery_in = self.query.backward(&cache.query_in, &dq, &mut grad.query);
        let mut dh1 = self.key.backward(&cache.h1, &dk, &mut grad.key);
        match (&self.extra_layer, &cache.extra) {
            (Some(layer), Some(c)) => {
                let g = grad
                    .extra_layer
                    .as_mut()
                    .expect("gradient twin has the extra layer");
                dh1.add_assign(&layer.backward(c, &dquery_in, g));
            }
            _ => dh1.add_assign(&dquery_in),
        }
        let dcombined = self
            .combiner
            .backward(&cache.combined_in, &dh1, &mut grad.combiner);
        dhidden.add_assign(&dcombined.cols_slice(0, d));
        let dtag = dcombined.cols_slice(d, d);
        for (r, &t) in tags.iter().enumerate() {
            for (g, v) in grad.tag_embedding.row_mut(t).iter_mut().zip(dtag.row(r)) {
                *g += v;
            }
        }
    }
}

impl Params for Tagger {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Mat)) {
        let p = |s: &str| {
            if prefix.is_empty() {
                s.to_string()
            } else {
                format!("{prefix}.{s}")
            }
        };
        self.encoder.visit(&p("encoder"), f);
        self.tag_head.visit(&p("tag_head"), f);
        f(p("tag_embedding"), &self.tag_embedding);
        self.combiner.visit(&p("combiner"), f);
        if let Some(l) = &self.extra_layer {
            l.visit(&p("extra_layer"), f);
        }
        self.query.visit(&p("query"), f);
        self.key.visit(&p("key"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Mat)) {
        let p = |s: &str| {
            if prefix.is_empty() {
                s.to_string()
            } else {
                format!("{prefix}.{s}")
            }
        };
        self.encoder.visit_mut(&p("encoder"), f);
        self.tag_head.visit_mut(&p("tag_head"), f);
        f(p("tag_embedding"), &mut self.tag_embedding);
        self.combiner.visit_mut(&p("combiner"), f);
        if let Some(l) = &mut self.extra_layer {
            l.visit_mut(&p("extra_layer"), f);
        }
        self.query.visit_mut(&p("query"), f);
        self.key.visit_mut(&p("key"), f);
    }
}
