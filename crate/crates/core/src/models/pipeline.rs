//! End-to-end prediction: tag and point in one pass, realize the order,
//! then fill every mask in a second pass.

use serde::{Deserialize, Serialize};

use super::inserter::InsertionModel;
use super::tagger::Tagger;
use super::tensor::argmax;
use super::Hyperparams;
use crate::edit::{EditPlan, InsertionMode, Tag};
use crate::insertion::{apply_insertion, build_insertion_input, MaskedSeq};
use crate::realize::{beam_realize, chain_to_skeleton, greedy_would_loop, Chain, PointerScores};
use crate::text::{TokenSeq, Vocabulary, PAD, PAD_ID, SENTINELS};
use crate::{Error, Result};

/// A trained tagger and insertion model sharing one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct FelixModels {
    pub hyper: Hyperparams,
    pub vocab: Vocabulary,
    pub tagger: Tagger,
    pub inserter: InsertionModel,
}

/// Everything the pipeline decided for one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub tokens: TokenSeq,
    pub plan: EditPlan,
    pub chain: Chain,
    pub masked: MaskedSeq,
    /// Whether unconstrained greedy pointer decoding would have looped.
    pub greedy_loop: bool,
}

impl FelixModels {
    pub fn predict(&self, source: &TokenSeq) -> Result<Prediction> {
        if let Some(s) = source.first_sentinel() {
            return Err(Error::Sentinel(s.to_string()));
        }
        let tag_set = self.hyper.tag_set();
        let ids = self.vocab.encode(&source.with_cls());
        let hidden = self.tagger.encode(&ids)?;
        let (_, tag_ids) = self.tagger.predict_tags(&hidden);
        let cls_insertion = tag_set.tag(tag_ids[0]).insertion;
        let tags: Vec<Tag> = tag_ids[1..].iter().map(|&t| tag_set.tag(t)).collect();

        let (chain, greedy_loop) = if self.hyper.pointing {
            let probs = self.tagger.pointer_scores(&hidden, &tag_ids)?;
            let rows = (0..probs.rows).map(|r| probs.row(r).to_vec()).collect();
            let scores = PointerScores::from_probabilities(rows)?;
            (
                beam_realize(&scores, &tags, self.hyper.beam_size)?,
                greedy_would_loop(&scores, &tags),
            )
        } else {
            (Chain::source_order(&tags), false)
        };
        let plan = EditPlan {
            pointers: chain.to_pointers(tags.len()),
            tags,
            cls_insertion,
        };
        let skeleton = chain_to_skeleton(&chain, &plan, source)?;
        let masked = build_insertion_input(&skeleton, &self.hyper.alignment())?;
        let fillers = self.fill(&masked)?;
        let tokens = apply_insertion(&masked, &fillers)?;
        Ok(Prediction {
            tokens,
            plan,
            chain,
            masked,
            greedy_loop,
        })
    }

    /// Argmax filler per mask. Sentinels are never predicted, except `[PAD]`
    /// when infilling; once a span produces `[PAD]` the rest of it is `[PAD]`.
    pub fn fill(&self, masked: &MaskedSeq) -> Result<Vec<String>> {
        let ids = self.vocab.encode(&masked.tokens.with_cls());
        let rows: Vec<usize> = masked.mask_positions.iter().map(|p| p + 1).collect();
        let logits = self.inserter.logits(&ids, &rows)?;
        let allow_pad = masked.mode == InsertionMode::Infilling;
        let mut out = Vec::with_capacity(logits.rows);
        for r in 0..logits.rows {
            let mut row = logits.row(r).to_vec();
            for (id, p) in row.iter_mut().enumerate().take(SENTINELS.len()) {
                if !(allow_pad && id == PAD_ID) {
                    *p = f64::NEG_INFINITY;
                }
            }
            let best = argmax(&row);
            out.push(self.vocab.token(best).unwrap_or(PAD).to_string());
        }
        if allow_pad {
            let mut at = 0;
            for span in &masked.spans {
                let slice = &mut out[at..at + span.len];
                if let Some(first) = slice.iter().position(|t| t == PAD) {
                    slice[first..].iter_mut().for_each(|t| *t = PAD.to_string());
                }
                at += span.len;
            }
        }
        Ok(out)
    }
}
