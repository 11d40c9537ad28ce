//! Insertion model: a separate encoder with a masked-LM head. Every mask is
//! predicted from the same forward pass over `[CLS] + y^m`.

use rand::Rng;

use super::layers::{Encoder, EncoderConfig, Linear, Params};
use super::tagger::cross_entropy;
use super::tensor::Mat;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct InsertionModel {
    pub encoder: Encoder,
    pub head: Linear,
}

/// Token ids of `[CLS] + y^m`, the row of each mask and its gold token id.
#[derive(Debug, Clone, PartialEq)]
pub struct InsertionExample {
    pub ids: Vec<usize>,
    pub mask_rows: Vec<usize>,
    pub labels: Vec<usize>,
}

impl InsertionModel {
    pub fn new(rng: &mut impl Rng, encoder: EncoderConfig) -> Result<Self> {
        Ok(InsertionModel {
            encoder: Encoder::new(rng, encoder)?,
            head: Linear::new(rng, encoder.dim, encoder.vocab_size),
        })
    }

    /// Vocabulary logits at `mask_rows`, one row per mask.
    pub fn logits(&self, ids: &[usize], mask_rows: &[usize]) -> Result<Mat> {
        if mask_rows.is_empty() {
            return Ok(Mat::zeros(0, self.head.w.cols));
        }
        let (hidden, _) = self.encoder.forward(ids)?;
        Ok(self.head.forward(&hidden.gather_rows(mask_rows)))
    }

    /// Mean cross-entropy over masks; zero for an example without masks.
    pub fn loss(&self, ex: &InsertionExample, grad: Option<&mut InsertionModel>) -> Result<f64> {
        if ex.mask_rows.len() != ex.labels.len() {
            return Err(Error::Shape("mask rows and labels differ in length".into()));
        }
        if ex.mask_rows.is_empty() {
            return Ok(0.0);
        }
        if let Some(&bad) = ex.mask_rows.iter().find(|&&r| r >= ex.ids.len()) {
            return Err(Error::Shape(format!("mask row {bad} outside the input")));
        }
        let (hidden, cache) = self.encoder.forward(&ex.ids)?;
        let gathered = hidden.gather_rows(&ex.mask_rows);
        let logits = self.head.forward(&gathered);
        let (loss, dlogits) = cross_entropy(&logits, &ex.labels);
        if !loss.is_finite() {
            return Err(Error::NonFinite(loss));
        }
        if let Some(grad) = grad {
            let dgathered = self.head.backward(&gathered, &dlogits, &mut grad.head);
            let mut dhidden = Mat::zeros(hidden.rows, hidden.cols);
            for (i, &r) in ex.mask_rows.iter().enumerate() {
                for (d, g) in dhidden.row_mut(r).iter_mut().zip(dgathered.row(i)) {
                    *d += g;
                }
            }
            self.encoder.backward(&cache, &dhidden, &mut grad.encoder);
        }
        Ok(loss)
    }
}

impl Params for InsertionModel {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Mat)) {
        let p = |s: &str| {
            if prefix.is_empty() {
                s.to_string()
            } else {
                format!("{prefix}.{s}")
            }
        };
        self.encoder.visit(&p("encoder"), f);
        self.head.visit(&p("head"), f);
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
        self.head.visit_mut(&p("head"), f);
    }
}
