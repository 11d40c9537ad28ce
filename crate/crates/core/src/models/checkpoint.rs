//! Versioned JSON checkpoints: every named tensor with its shape, plus the
//! hyperparameters, vocabulary and the run configuration that produced it.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::inserter::InsertionModel;
use super::layers::Params;
use super::pipeline::FelixModels;
use super::tagger::Tagger;
use super::tensor::Mat;
use super::train::ModelKind;
use super::Hyperparams;
use crate::corpus::{read_json, write_json};
use crate::text::Vocabulary;
use crate::{Error, Result};

pub const FORMAT: &str = "felix-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelKind,
    pub hyperparams: Hyperparams,
    /// Effective run configuration, stored for provenance only.
    #[serde(default)]
    pub config: serde_json::Value,
    pub vocabulary: Vocabulary,
    pub tensors: Vec<NamedTensor>,
}

fn dump(model: &impl Params) -> Vec<NamedTensor> {
    model
        .named_params()
        .into_iter()
        .map(|(name, m)| NamedTensor {
            name,
            shape: [m.rows, m.cols],
            data: m.data.clone(),
        })
        .collect()
}

fn restore(model: &mut impl Params, tensors: &[NamedTensor]) -> Result<()> {
    let mut by_name: BTreeMap<&str, &NamedTensor> = BTreeMap::new();
    for t in tensors {
        if by_name.insert(&t.name, t).is_some() {
            return Err(Error::Shape(format!("tensor `{}` appears twice", t.name)));
        }
    }
    let mut err = None;
    model.visit_mut("", &mut |name, m| {
        if err.is_some() {
            return;
        }
        match by_name.remove(name.as_str()) {
            None => err = Some(Error::Shape(format!("checkpoint lacks tensor `{name}`"))),
            Some(t) if t.shape != [m.rows, m.cols] || t.data.len() != m.data.len() => {
                err = Some(Error::Shape(format!(
                    "tensor `{name}` has shape {:?} ({} values), expected [{}, {}]",
                    t.shape,
                    t.data.len(),
                    m.rows,
                    m.cols
                )))
            }
            Some(t) => m.data.copy_from_slice(&t.data),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if let Some(name) = by_name.keys().next() {
        return Err(Error::Shape(format!("unexpected tensor `{name}`")));
    }
    let mut finite = true;
    model.visit("", &mut |_, m: &Mat| finite &= m.is_finite());
    if !finite {
        return Err(Error::NonFinite(f64::NAN));
    }
    Ok(())
}

impl Checkpoint {
    fn new(
        model: ModelKind,
        models: &FelixModels,
        config: serde_json::Value,
        tensors: Vec<NamedTensor>,
    ) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            model,
            hyperparams: models.hyper.clone(),
            config,
            vocabulary: models.vocab.clone(),
            tensors,
        }
    }

    pub fn tagger(models: &FelixModels, config: serde_json::Value) -> Self {
        Self::new(ModelKind::Tagger, models, config, dump(&models.tagger))
    }

    pub fn insertion(models: &FelixModels, config: serde_json::Value) -> Self {
        Self::new(ModelKind::Insertion, models, config, dump(&models.inserter))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = read_json(path)?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        Ok(ck)
    }

    fn expect(&self, kind: ModelKind) -> Result<()> {
        if self.model != kind {
            return Err(Error::Data(format!(
                "expected a {kind} checkpoint, found {}",
                self.model
            )));
        }
        Ok(())
    }

    pub fn to_tagger(&self) -> Result<Tagger> {
        self.expect(ModelKind::Tagger)?;
        let h = &self.hyperparams;
        h.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut t = Tagger::new(
            &mut rng,
            h.encoder(self.vocabulary.len()),
            h.tag_set().len(),
            h.extra_pointer_layer,
        )?;
        restore(&mut t, &self.tensors)?;
        Ok(t)
    }

    pub fn to_inserter(&self) -> Result<InsertionModel> {
        self.expect(ModelKind::Insertion)?;
        let h = &self.hyperparams;
        h.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = InsertionModel::new(&mut rng, h.encoder(self.vocabulary.len()))?;
        restore(&mut m, &self.tensors)?;
        Ok(m)
    }

    /// Pairs a tagger and an insertion checkpoint. They must share the
    /// vocabulary and the settings that change decoding.
    pub fn assemble(tagger: &Checkpoint, insertion: &Checkpoint) -> Result<FelixModels> {
        if tagger.vocabulary != insertion.vocabulary {
            return Err(Error::Data(
                "tagger and insertion checkpoints use different vocabularies".into(),
            ));
        }
        let (a, b) = (&tagger.hyperparams, &insertion.hyperparams);
        if a.mode != b.mode || a.max_span != b.max_span {
            return Err(Error::Data(format!(
                "tagger ({} / max_span {}) and insertion model ({} / max_span {}) disagree",
                a.mode, a.max_span, b.mode, b.max_span
            )));
        }
        Ok(FelixModels {
            hyper: tagger.hyperparams.clone(),
            vocab: tagger.vocabulary.clone(),
            tagger: tagger.to_tagger()?,
            inserter: insertion.to_inserter()?,
        })
    }
}
