//! The commands behind the `felix` binary. Each reads its inputs, writes
//! its artifacts and returns a summary; nothing here prints data.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::align::{alignment_stats, AlignmentStats};
use crate::config::RunConfig;
use crate::corpus::{read_json, read_jsonl, write_json, write_jsonl, AlignedRecord, CorpusRecord};
use crate::edit::{Insertion, InsertionMode, Tag};
use crate::metrics::{corpus_ter, MetricReport, TerReport, TER_MAX_SHIFT};
use crate::models::checkpoint::Checkpoint;
use crate::models::train::ModelKind;
use crate::models::{train, StepLog};
use crate::text::{detokenize, TokenSeq, Tokenizer, WhitespaceTokenizer};
use crate::{Error, Result};

pub const TAGGER_CHECKPOINT: &str = "tagger.json";
pub const INSERTION_CHECKPOINT: &str = "insertion.json";
pub const LOSS_LOG: &str = "loss.jsonl";

/// Sidecar written next to every data artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta<T> {
    pub command: String,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, String>,
    pub summary: T,
}

/// Path of the sidecar for `artifact`: `out.jsonl` gets `out.jsonl.meta.json`.
pub fn meta_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn write_meta<T: Serialize>(
    artifact: &Path,
    command: &str,
    config: &RunConfig,
    inputs: &[(&str, &Path)],
    summary: &T,
) -> Result<()> {
    let meta = Meta {
        command: command.to_string(),
        config: config.clone(),
        inputs: inputs
            .iter()
            .map(|(k, p)| (k.to_string(), p.display().to_string()))
            .collect(),
        summary,
    };
    write_json(&meta_path(artifact), &meta)
}

fn tokenizer(cfg: &RunConfig) -> WhitespaceTokenizer {
    WhitespaceTokenizer {
        lowercase: cfg.lowercase,
    }
}

fn pairs(path: &Path, cfg: &RunConfig) -> Result<Vec<(TokenSeq, TokenSeq)>> {
    let tok = tokenizer(cfg);
    let records: Vec<CorpusRecord> = read_jsonl(path)?;
    if records.is_empty() {
        return Err(Error::Data(format!("{}: empty corpus", path.display())));
    }
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let target = r
                .target
                .as_deref()
                .ok_or_else(|| Error::Data(format!("{}: record {} has no target", path.display(), i + 1)))?;
            Ok((tok.tokenize(&r.source), tok.tokenize(target)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignSummary {
    pub stats: AlignmentStats,
}

pub fn cmd_align(input: &Path, output: &Path, cfg: &RunConfig) -> Result<AlignSummary> {
    let pairs = pairs(input, cfg)?;
    let acfg = cfg.alignment();
    let mut records = Vec::new();
    for (s, t) in &pairs {
        if let Ok(rec) = AlignedRecord::build(s, t, &acfg)? {
            records.push(rec);
        }
    }
    let summary = AlignSummary {
        stats: alignment_stats(pairs.iter().map(|(s, t)| (s, t)), &acfg),
    };
    write_jsonl(output, &records)?;
    write_meta(output, "align", cfg, &[("input", input)], &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub examples: usize,
    pub vocabulary: usize,
    pub final_tagger_loss: Option<f64>,
    pub final_insertion_loss: Option<f64>,
}

pub fn cmd_train(input: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<TrainSummary> {
    let hyper = cfg.hyperparams()?;
    let records: Vec<AlignedRecord> = read_jsonl(input)?;
    if records.is_empty() {
        return Err(Error::Data(format!("{}: no aligned examples", input.display())));
    }
    let mut log: Vec<StepLog> = Vec::new();
    let models = train(&records, &hyper, |s| {
        if s.step % 100 == 0 {
            log::info!("{} step {} loss {:.6}", s.model, s.step, s.loss);
        }
        log.push(*s);
    })?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let config = serde_json::to_value(cfg).expect("config serializes");
    Checkpoint::tagger(&models, config.clone()).save(&out_dir.join(TAGGER_CHECKPOINT))?;
    Checkpoint::insertion(&models, config).save(&out_dir.join(INSERTION_CHECKPOINT))?;
    let last = |kind: ModelKind| log.iter().rev().find(|s| s.model == kind).map(|s| s.loss);
    let summary = TrainSummary {
        examples: records.len(),
        vocabulary: models.vocab.len(),
        final_tagger_loss: last(ModelKind::Tagger),
        final_insertion_loss: last(ModelKind::Insertion),
    };
    let loss_path = out_dir.join(LOSS_LOG);
    write_jsonl(&loss_path, &log)?;
    write_meta(&loss_path, "train", cfg, &[("input", input)], &summary)?;
    Ok(summary)
}

/// One line of `predictions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub source: String,
    pub prediction: String,
    pub tags: Vec<Tag>,
    #[serde(with = "crate::edit::insertion_serde")]
    pub cls_insertion: Insertion,
    pub chain: Vec<usize>,
    pub masked_input: TokenSeq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictSummary {
    pub examples: usize,
    pub pointing: bool,
    pub beam_size: usize,
    /// Share of sources whose unconstrained greedy pointer decode loops.
    pub greedy_loop_percent: f64,
}

/// `explicit` lists config keys the user set; only those among `pointing`,
/// `beam_size` and `lowercase` override what the checkpoints recorded.
pub fn cmd_predict(
    input: &Path,
    model_dir: &Path,
    output: &Path,
    cfg: &RunConfig,
    explicit: &[String],
) -> Result<PredictSummary> {
    let tagger_path = model_dir.join(TAGGER_CHECKPOINT);
    let insertion_path = model_dir.join(INSERTION_CHECKPOINT);
    let tagger = Checkpoint::load(&tagger_path)?;
    let mut models = Checkpoint::assemble(&tagger, &Checkpoint::load(&insertion_path)?)?;
    let trained: RunConfig = serde_json::from_value(tagger.config.clone()).unwrap_or_default();
    let mut effective = trained.clone();
    let set = |k: &str| explicit.iter().any(|e| e.replace('-', "_") == k);
    if set("pointing") {
        models.hyper.pointing = cfg.pointing;
        effective.pointing = cfg.pointing;
    }
    if set("beam_size") {
        models.hyper.beam_size = cfg.beam_size;
        effective.beam_size = cfg.beam_size;
    }
    if set("lowercase") {
        effective.lowercase = cfg.lowercase;
    }
    let tok = tokenizer(&effective);
    let corpus: Vec<CorpusRecord> = read_jsonl(input)?;
    if corpus.is_empty() {
        return Err(Error::Data(format!("{}: empty corpus", input.display())));
    }
    let mut out = Vec::with_capacity(corpus.len());
    let mut loops = 0;
    for rec in &corpus {
        let source = tok.tokenize(&rec.source);
        let p = models.predict(&source)?;
        loops += usize::from(p.greedy_loop);
        out.push(PredictionRecord {
            source: rec.source.clone(),
            prediction: detokenize(&p.tokens)?,
            tags: p.plan.tags,
            cls_insertion: p.plan.cls_insertion,
            chain: p.chain.0,
            masked_input: p.masked.tokens,
        });
    }
    let summary = PredictSummary {
        examples: out.len(),
        pointing: models.hyper.pointing,
        beam_size: models.hyper.beam_size,
        greedy_loop_percent: 100.0 * loops as f64 / out.len() as f64,
    };
    write_jsonl(output, &out)?;
    write_meta(
        output,
        "predict",
        &effective,
        &[
            ("input", input),
            ("tagger", &tagger_path),
            ("insertion", &insertion_path),
        ],
        &summary,
    )?;
    Ok(summary)
}

#[derive(Deserialize)]
struct PredictionLine {
    #[serde(default)]
    source: Option<String>,
    prediction: String,
}

/// A reference line: `target` for one reference or `targets` for several.
#[derive(Deserialize)]
struct ReferenceLine {
    #[serde(default)]
    source: Option<String>,
    #[serde(default)]
    target: Option<String>,
    #[serde(default)]
    targets: Option<Vec<String>>,
}

/// Scores predictions against references. Sources come from the prediction
/// lines, or from the reference lines when predictions lack them.
pub fn cmd_evaluate(
    predictions: &Path,
    references: &Path,
    output: &Path,
    cfg: &RunConfig,
) -> Result<MetricReport> {
    let tok = tokenizer(cfg);
    let preds: Vec<PredictionLine> = read_jsonl(predictions)?;
    let refs: Vec<ReferenceLine> = read_jsonl(references)?;
    if preds.is_empty() {
        return Err(Error::Data(format!("{}: no predictions", predictions.display())));
    }
    if preds.len() != refs.len() {
        return Err(Error::Data(format!(
            "{} predictions but {} references",
            preds.len(),
            refs.len()
        )));
    }
    let mut sources = Vec::with_capacity(preds.len());
    let mut hyps = Vec::with_capacity(preds.len());
    let mut references_tok = Vec::with_capacity(preds.len());
    for (i, (p, r)) in preds.iter().zip(&refs).enumerate() {
        let source = p
            .source
            .as_ref()
            .or(r.source.as_ref())
            .ok_or_else(|| Error::Data(format!("record {}: no source in either file", i + 1)))?;
        let targets: Vec<TokenSeq> = match (&r.target, &r.targets) {
            (_, Some(ts)) if !ts.is_empty() => ts.iter().map(|t| tok.tokenize(t)).collect(),
            (Some(t), _) => vec![tok.tokenize(t)],
            _ => {
                return Err(Error::Data(format!(
                    "{}: record {} has no target",
                    references.display(),
                    i + 1
                )))
            }
        };
        sources.push(tok.tokenize(source));
        hyps.push(tok.tokenize(&p.prediction));
        references_tok.push(targets);
    }
    let report = MetricReport::compute(&sources, &hyps, &references_tok, cfg.sari_variant)?;
    write_json(output, &report)?;
    let text_path = text_path(output);
    std::fs::write(&text_path, report.to_text()).map_err(|e| Error::io(&text_path, e))?;
    write_meta(
        output,
        "evaluate",
        cfg,
        &[("predictions", predictions), ("references", references)],
        &(),
    )?;
    Ok(report)
}

/// `report.json` gets a `report.txt` twin.
pub fn text_path(json: &Path) -> PathBuf {
    json.with_extension("txt")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub mode: InsertionMode,
    pub pointing: bool,
    pub coverage_percent: f64,
    pub mask_percent: f64,
    pub alignment: AlignmentStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub examples: usize,
    pub mean_source_len: f64,
    pub mean_target_len: f64,
    /// Edits turning each source into its target.
    pub ter: TerReport,
    pub modes: Vec<ModeStats>,
}

impl CorpusStats {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "examples: {}\nmean_source_len: {:.4}\nmean_target_len: {:.4}\nter: {:.4}\nter_ins: {}\nter_del: {}\nter_sub: {}\nter_shift: {}\n",
            self.examples,
            self.mean_source_len,
            self.mean_target_len,
            self.ter.ter,
            self.ter.ins,
            self.ter.del,
            self.ter.sub,
            self.ter.shift,
        );
        for m in &self.modes {
            let tag = format!(
                "{}_{}",
                m.mode,
                if m.pointing { "pointing" } else { "no_pointing" }
            );
            s.push_str(&format!(
                "coverage_{tag}: {:.4}\nmask_{tag}: {:.4}\n",
                m.coverage_percent, m.mask_percent
            ));
        }
        s
    }
}

pub fn corpus_stats(pairs: &[(TokenSeq, TokenSeq)], cfg: &RunConfig) -> Result<CorpusStats> {
    if pairs.is_empty() {
        return Err(Error::Data("empty corpus".into()));
    }
    let n = pairs.len() as f64;
    let sources: Vec<TokenSeq> = pairs.iter().map(|(s, _)| s.clone()).collect();
    let targets: Vec<Vec<TokenSeq>> = pairs.iter().map(|(_, t)| vec![t.clone()]).collect();
    let ter = corpus_ter(&sources, &targets, TER_MAX_SHIFT)?;
    let mut modes = Vec::new();
    for mode in [InsertionMode::Masking, InsertionMode::Infilling] {
        for pointing in [true, false] {
            let mut acfg = cfg.alignment();
            acfg.mode = mode;
            acfg.pointing = pointing;
            if mode == InsertionMode::Infilling && acfg.max_span == usize::MAX {
                continue;
            }
            let stats = alignment_stats(pairs.iter().map(|(s, t)| (s, t)), &acfg);
            modes.push(ModeStats {
                mode,
                pointing,
                coverage_percent: stats.coverage_percent,
                mask_percent: stats.mask_percent,
                alignment: stats,
            });
        }
    }
    Ok(CorpusStats {
        examples: pairs.len(),
        mean_source_len: pairs.iter().map(|(s, _)| s.len()).sum::<usize>() as f64 / n,
        mean_target_len: pairs.iter().map(|(_, t)| t.len()).sum::<usize>() as f64 / n,
        ter: ter.into(),
        modes,
    })
}

pub fn cmd_stats(input: &Path, output: &Path, cfg: &RunConfig) -> Result<CorpusStats> {
    let stats = corpus_stats(&pairs(input, cfg)?, cfg)?;
    write_json(output, &stats)?;
    let text_path = text_path(output);
    std::fs::write(&text_path, stats.to_text()).map_err(|e| Error::io(&text_path, e))?;
    write_meta(output, "stats", cfg, &[("input", input)], &())?;
    Ok(stats)
}

/// Reads a sidecar back, mainly for tests and tooling.
pub fn read_meta<T: serde::de::DeserializeOwned>(artifact: &Path) -> Result<Meta<T>> {
    read_json(&meta_path(artifact))
}
