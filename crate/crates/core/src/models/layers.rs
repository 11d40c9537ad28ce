//! Transformer building blocks with explicit forward caches and backward
//! passes. Gradients accumulate into a parameter-shaped twin of the layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{sinusoidal, softmax_rows, softmax_rows_backward, Mat};
use crate::{Error, Result};

/// Named access to every trainable tensor, in a fixed order.
pub trait Params {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Mat));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Mat));

    fn named_params(&self) -> Vec<(String, &Mat)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, m| out.push((name, m)));
        out
    }

    fn zero(&mut self) {
        self.visit_mut("", &mut |_, m| m.fill(0.0));
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, m| n += m.data.len());
        n
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Mat,
    pub b: Mat,
}

impl Linear {
    pub fn new(rng: &mut impl Rng, input: usize, output: usize) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        Linear {
            w: uniform(rng, input, output, bound),
            b: Mat::zeros(1, output),
        }
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut y = x.matmul(&self.w);
        for r in 0..y.rows {
            for (o, b) in y.row_mut(r).iter_mut().zip(&self.b.data) {
                *o += b;
            }
        }
        y
    }

    /// Accumulates weight gradients and returns the input gradient.
    pub fn backward(&self, x: &Mat, dy: &Mat, grad: &mut Linear) -> Mat {
        grad.w.add_assign(&x.t_matmul(dy));
        for r in 0..dy.rows {
            for (g, d) in grad.b.data.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        dy.matmul_t(&self.w)
    }
}

impl Params for Linear {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Mat)) {
        f(join(prefix, "w"), &self.w);
        f(join(prefix, "b"), &self.b);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Mat)) {
        f(join(prefix, "w"), &mut self.w);
        f(join(prefix, "b"), &mut self.b);
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Mat,
    pub beta: Mat,
}

pub struct LayerNormCache {
    xhat: Mat,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        let mut gamma = Mat::zeros(1, dim);
        gamma.fill(1.0);
        LayerNorm {
            gamma,
            beta: Mat::zeros(1, dim),
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, LayerNormCache) {
        let d = x.cols as f64;
        let mut xhat = Mat::zeros(x.rows, x.cols);
        let mut inv_std = Vec::with_capacity(x.rows);
        let mut y = Mat::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for (c, &v) in row.iter().enumerate() {
                let h = (v - mean) * inv;
                *xhat.at_mut(r, c) = h;
                *y.at_mut(r, c) = h * self.gamma.data[c] + self.beta.data[c];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Mat, grad: &mut LayerNorm) -> Mat {
        let d = dy.cols as f64;
        let mut dx = Mat::zeros(dy.rows, dy.cols);
        for r in 0..dy.rows {
            let xh = cache.xhat.row(r);
            let dyr = dy.row(r);
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for c in 0..dy.cols {
                grad.gamma.data[c] += dyr[c] * xh[c];
                grad.beta.data[c] += dyr[c];
                let dxh = dyr[c] * self.gamma.data[c];
                sum_dxhat += dxh;
                sum_dxhat_xhat += dxh * xh[c];
            }
            let inv = cache.inv_std[r];
            for c in 0..dy.cols {
                let dxh = dyr[c] * self.gamma.data[c];
                *dx.at_mut(r, c) = inv / d * (d * dxh - sum_dxhat - xh[c] * sum_dxhat_xhat);
            }
        }
        dx
    }
}

impl Params for LayerNorm {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Mat)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Mat)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Multi-head self-attention without masking: every position attends to
/// every position.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

pub struct AttentionCache {
    x: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    probs: Vec<Mat>,
    context: Mat,
}

impl SelfAttention {
    pub fn new(rng: &mut impl Rng, dim: usize, heads: usize) -> Self {
        SelfAttention {
            heads,
            query: Linear::new(rng, dim, dim),
            key: Linear::new(rng, dim, dim),
            value: Linear::new(rng, dim, dim),
            output: Linear::new(rng, dim, dim),
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, AttentionCache) {
        let q = self.query.forward(x);
        let k = self.key.forward(x);
        let v = self.value.forward(x);
        let dh = x.cols / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut context = Mat::zeros(x.rows, x.cols);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = (
                q.cols_slice(h * dh, dh),
                k.cols_slice(h * dh, dh),
                v.cols_slice(h * dh, dh),
            );
            let mut scores = qh.matmul_t(&kh);
            scores.scale(scale);
            let p = softmax_rows(&scores);
            context.add_into_cols(h * dh, &p.matmul(&vh));
            probs.push(p);
        }
        let out = self.output.forward(&context);
        (
            out,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                probs,
                context,
            },
        )
    }

    pub fn backward(&self, cache: &AttentionCache, dy: &Mat, grad: &mut SelfAttention) -> Mat {
        let dcontext = self.output.backward(&cache.context, dy, &mut grad.output);
        let (n, d) = (cache.x.rows, cache.x.cols);
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Mat::zeros(n, d);
        let mut dk = Mat::zeros(n, d);
        let mut dv = Mat::zeros(n, d);
        for h in 0..self.heads {
            let p = &cache.probs[h];
            let qh = cache.q.cols_slice(h * dh, dh);
            let kh = cache.k.cols_slice(h * dh, dh);
            let vh = cache.v.cols_slice(h * dh, dh);
            let dctx = dcontext.cols_slice(h * dh, dh);
            let dp = dctx.matmul_t(&vh);
            dv.add_into_cols(h * dh, &p.t_matmul(&dctx));
            let mut ds = softmax_rows_backward(p, &dp);
            ds.scale(scale);
            dq.add_into_cols(h * dh, &ds.matmul(&kh));
            dk.add_into_cols(h * dh, &ds.t_matmul(&qh));
        }
        let mut dx = self.query.backward(&cache.x, &dq, &mut grad.query);
        dx.add_assign(&self.key.backward(&cache.x, &dk, &mut grad.key));
        dx.add_assign(&self.value.backward(&cache.x, &dv, &mut grad.value));
        dx
    }
}

impl Params for SelfAttention {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Mat)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Mat)) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

/// Post-norm transformer block: attention and a GELU feed-forward, each
/// wrapped in a residual connection followed by layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLayer {
    pub attention: SelfAttention,
    pub norm1: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub norm2: LayerNorm,
}

pub struct LayerCache {
    attn: AttentionCache,
    norm1: LayerNormCache,
    x1: Mat,
    pre_act: Mat,
    act: Mat,
    norm2: LayerNormCache,
}

impl TransformerLayer {
    pub fn new(rng: &mut impl Rng, dim: usize, heads: usize, ffn_dim: usize) -> Self {
        TransformerLayer {
            attention: SelfAttention::new(rng, dim, heads),
            norm1: LayerNorm::new(dim),
            ffn_in: Linear::new(rng, dim, ffn_dim),
            ffn_out: Linear::new(rng, ffn_dim, dim),
            norm2: LayerNorm::new(dim),
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, LayerCache) {
        let (a, attn) = self.attention.forward(x);
        let (x1, norm1) = self.norm1.forward(&x.add(&a));
        let pre_act = self.ffn_in.forward(&x1);
        let act = Mat::from_vec(
            pre_act.rows,
            pre_act.cols,
            pre_act.data.iter().map(|&v| gelu(v)).collect(),
        );
        let f = self.ffn_out.forward(&act);
        let (y, norm2) = self.norm2.forward(&x1.add(&f));
        (
            y,
            LayerCache {
                attn,
                norm1,
                x1,
                pre_act,
                act,
                norm2,
            },
        )
    }

    pub fn backward(&self, cache: &LayerCache, dy: &Mat, grad: &mut TransformerLayer) -> Mat {
        let dr2 = self.norm2.backward(&cache.norm2, dy, &mut grad.norm2);
        let dact = self.ffn_out.backward(&cache.act, &dr2, &mut grad.ffn_out);
        let dpre = Mat::from_vec(
            dact.rows,
            dact.cols,
            dact.data
                .iter()
                .zip(&cache.pre_act.data)
                .map(|(g, &x)| g * gelu_grad(x))
                .collect(),
        );
        let mut dx1 = self.ffn_in.backward(&cache.x1, &dpre, &mut grad.ffn_in);
        dx1.add_assign(&dr2);
        let dr1 = self.norm1.backward(&cache.norm1, &dx1, &mut grad.norm1);
        let mut dx = self.attention.backward(&cache.attn, &dr1, &mut grad.attention);
        dx.add_assign(&dr1);
        dx
    }
}

impl Params for TransformerLayer {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Mat)) {
        self.attention.visit(&join(prefix, "attention"), f);
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.ffn_in.visit(&join(prefix, "ffn_in"), f);
        self.ffn_out.visit(&join(prefix, "ffn_out"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Mat)) {
        self.attention.visit_mut(&join(prefix, "attention"), f);
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.ffn_in.visit_mut(&join(prefix, "ffn_in"), f);
        self.ffn_out.visit_mut(&join(prefix, "ffn_out"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.layers == 0 || self.heads == 0 || self.ffn_dim == 0 || self.max_len == 0 {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Token embeddings plus fixed sinusoidal positions, then a stack of
/// transformer layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub embedding: Mat,
    pub layers: Vec<TransformerLayer>,
}

pub struct EncoderCache {
    ids: Vec<usize>,
    layers: Vec<LayerCache>,
}

impl Encoder {
    pub fn new(rng: &mut impl Rng, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let bound = (3.0 / config.dim as f64).sqrt();
        let embedding = uniform(rng, config.vocab_size, config.dim, bound);
        let layers = (0..config.layers)
            .map(|_| TransformerLayer::new(rng, config.dim, config.heads, config.ffn_dim))
            .collect();
        Ok(Encoder {
            config,
            embedding,
            layers,
        })
    }

    pub fn positions(&self, len: usize) -> Mat {
        sinusoidal(len, self.config.dim)
    }

    pub fn forward(&self, ids: &[usize]) -> Result<(Mat, EncoderCache)> {
        self.forward_with(ids, true)
    }

    /// `use_positions = false` drops the position table, which makes the
    /// encoder permutation-equivariant.
    pub fn forward_with(&self, ids: &[usize], use_positions: bool) -> Result<(Mat, EncoderCache)> {
        if ids.len() > self.config.max_len {
            return Err(Error::TooLong {
                len: ids.len(),
                max: self.config.max_len,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::Shape(format!("token id {bad} outside the vocabulary")));
        }
        let mut x = self.embedding.gather_rows(ids);
        if use_positions {
            x.add_assign(&self.positions(ids.len()));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, c) = layer.forward(&x);
            caches.push(c);
            x = y;
        }
        Ok((
            x,
            EncoderCache {
                ids: ids.to_vec(),
                layers: caches,
            },
        ))
    }

    pub fn backward(&self, cache: &EncoderCache, dh: &Mat, grad: &mut Encoder) {
        let mut d = dh.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            d = layer.backward(&cache.layers[i], &d, &mut grad.layers[i]);
        }
        for (r, &id) in cache.ids.iter().enumerate() {
            for (g, v) in grad.embedding.row_mut(id).iter_mut().zip(d.row(r)) {
                *g += v;
            }
        }
    }
}

impl Params for Encoder {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Mat)) {
        f(join(prefix, "embedding"), &self.embedding);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layer{i}")), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Mat)) {
        f(join(prefix, "embedding"), &mut self.embedding);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layer{i}")), f);
        }
    }
}
