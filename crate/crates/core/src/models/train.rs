//! Deterministic mini-batch training for both models.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::inserter::{InsertionExample, InsertionModel};
use super::layers::Params;
use super::pipeline::FelixModels;
use super::tagger::{Tagger, TaggerExample};
use super::Hyperparams;
use crate::corpus::AlignedRecord;
use crate::edit::{Base, Tag};
use crate::text::Vocabulary;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::Config(format!("unknown optimizer `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Tagger,
    Insertion,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Tagger => "tagger",
            ModelKind::Insertion => "insertion",
        })
    }
}

/// Mean batch loss after one optimizer step's forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub model: ModelKind,
    pub step: usize,
    pub loss: f64,
}

struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    momentum: f64,
    clip: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    t: i32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    fn new(h: &Hyperparams, model: &impl Params) -> Self {
        let shapes: Vec<usize> = model.named_params().iter().map(|(_, m)| m.data.len()).collect();
        let zeros = || shapes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        Optimizer {
            kind: h.optimizer,
            lr: h.learning_rate,
            momentum: h.momentum,
            clip: h.clip_norm,
            first: zeros(),
            second: zeros(),
            t: 0,
        }
    }

    fn step<P: Params>(&mut self, model: &mut P, grad: &P) {
        let grads = grad.named_params();
        let norm = grads
            .iter()
            .flat_map(|(_, m)| m.data.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        let scale = if self.clip > 0.0 && norm > self.clip {
            self.clip / norm
        } else {
            1.0
        };
        self.t += 1;
        let mut i = 0;
        model.visit_mut("", &mut |_, param| {
            let g = &grads[i].1.data;
            let m = &mut self.first[i];
            match self.kind {
                OptimizerKind::Sgd => {
                    for ((p, &g), m) in param.data.iter_mut().zip(g).zip(m.iter_mut()) {
                        *m = self.momentum * *m + g * scale;
                        *p -= self.lr * *m;
                    }
                }
                OptimizerKind::Adam => {
                    let v = &mut self.second[i];
                    let c1 = 1.0 - ADAM_BETA1.powi(self.t);
                    let c2 = 1.0 - ADAM_BETA2.powi(self.t);
                    for (((p, &g), m), v) in param.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        let g = g * scale;
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
            i += 1;
        });
    }
}

/// Reshuffles the example order every epoch.
struct Batches {
    order: Vec<usize>,
    at: usize,
}

impl Batches {
    fn new(n: usize) -> Self {
        Batches {
            order: (0..n).collect(),
            at: n,
        }
    }

    fn next(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..size.min(self.order.len()))
            .map(|_| {
                if self.at == self.order.len() {
                    self.order.shuffle(rng);
                    self.at = 0;
                }
                self.at += 1;
                self.order[self.at - 1]
            })
            .collect()
    }
}

fn fit<P: Params + Clone>(
    model: &mut P,
    examples: usize,
    hyper: &Hyperparams,
    kind: ModelKind,
    rng: &mut ChaCha8Rng,
    loss: impl Fn(&P, usize, &mut P) -> Result<f64>,
    log: &mut dyn FnMut(&StepLog),
) -> Result<()> {
    if examples == 0 {
        return Ok(());
    }
    let mut opt = Optimizer::new(hyper, model);
    let mut grad = model.clone();
    let mut batches = Batches::new(examples);
    for step in 0..hyper.steps {
        grad.zero();
        let batch = batches.next(hyper.batch_size, rng);
        let mut total = 0.0;
        for &i in &batch {
            total += loss(model, i, &mut grad)?;
        }
        let n = batch.len() as f64;
        grad.visit_mut("", &mut |_, m| m.scale(1.0 / n));
        let mean = total / n;
        if !mean.is_finite() {
            return Err(Error::NonFinite(mean));
        }
        log(&StepLog {
            model: kind,
            step,
            loss: mean,
        });
        opt.step(model, &grad);
    }
    Ok(())
}

/// Model inputs derived from aligned records.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub vocab: Vocabulary,
    pub tagger: Vec<TaggerExample>,
    pub insertion: Vec<InsertionExample>,
}

impl TrainingData {
    pub fn new(records: &[AlignedRecord], hyper: &Hyperparams) -> Result<Self> {
        let vocab = Vocabulary::build(records.iter().flat_map(|r| [&r.source_tokens, &r.target_tokens]));
        let tag_set = hyper.tag_set();
        let cfg = hyper.alignment();
        let mut tagger = Vec::with_capacity(records.len());
        let mut insertion = Vec::new();
        for rec in records {
            rec.plan.validate()?;
            let mut tags = Vec::with_capacity(rec.plan.tags.len() + 1);
            tags.push(tag_set.id(Tag::new(Base::Keep, rec.plan.cls_insertion))?);
            for &t in &rec.plan.tags {
                tags.push(tag_set.id(t)?);
            }
            tagger.push(TaggerExample {
                ids: vocab.encode(&rec.source_tokens.with_cls()),
                tags,
                pointers: rec.plan.pointers.clone(),
            });
            let masked = rec.masked(&cfg)?;
            if masked.mask_count() > 0 {
                insertion.push(InsertionExample {
                    ids: vocab.encode(&masked.tokens.with_cls()),
                    mask_rows: masked.mask_positions.iter().map(|p| p + 1).collect(),
                    labels: rec.insertion_labels.iter().map(|t| vocab.id_or_unk(t)).collect(),
                });
            }
        }
        Ok(TrainingData {
            vocab,
            tagger,
            insertion,
        })
    }
}

/// Trains the tagger, then the insertion model, each from its own data.
/// Every random draw comes from one generator seeded with `hyper.seed`.
pub fn train(
    records: &[AlignedRecord],
    hyper: &Hyperparams,
    mut log: impl FnMut(&StepLog),
) -> Result<FelixModels> {
    hyper.validate()?;
    if records.is_empty() {
        return Err(Error::Data("no aligned examples to train on".into()));
    }
    let data = TrainingData::new(records, hyper)?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let enc = hyper.encoder(data.vocab.len());
    let mut tagger = Tagger::new(&mut rng, enc, hyper.tag_set().len(), hyper.extra_pointer_layer)?;
    let mut inserter = InsertionModel::new(&mut rng, enc)?;
    let pointing = hyper.pointing;
    fit(
        &mut tagger,
        data.tagger.len(),
        hyper,
        ModelKind::Tagger,
        &mut rng,
        |m, i, g| Ok(m.loss(&data.tagger[i], pointing, Some(g))?.total()),
        &mut log,
    )?;
    fit(
        &mut inserter,
        data.insertion.len(),
        hyper,
        ModelKind::Insertion,
        &mut rng,
        |m, i, g| m.loss(&data.insertion[i], Some(g)),
        &mut log,
    )?;
    Ok(FelixModels {
        hyper: hyper.clone(),
        vocab: data.vocab,
        tagger,
        inserter,
    })
}
