//! JSONL corpora and aligned training records.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::align::{align, AlignmentConfig, AlignmentOutcome, UnalignableReason};
use crate::edit::EditPlan;
use crate::insertion::{build_insertion_input, oracle_insertions, MaskedSeq};
use crate::realize::{chain_to_skeleton, daisy_chain};
use crate::text::TokenSeq;
use crate::{Error, Result};

/// One line of an input corpus. `target` may be absent at prediction time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

/// A pair turned into tagger and insertion-model targets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedRecord {
    pub source_tokens: TokenSeq,
    pub target_tokens: TokenSeq,
    #[serde(flatten)]
    pub plan: EditPlan,
    pub masked_input: TokenSeq,
    pub insertion_labels: Vec<String>,
}

impl AlignedRecord {
    /// Aligns a pair and derives the insertion input and its gold fillers.
    pub fn build(
        source: &TokenSeq,
        target: &TokenSeq,
        cfg: &AlignmentConfig,
    ) -> Result<std::result::Result<Self, UnalignableReason>> {
        let plan = match align(source, target, cfg) {
            AlignmentOutcome::Plan(plan) => plan,
            AlignmentOutcome::Unalignable(reason) => return Ok(Err(reason)),
        };
        let masked = masked_input(&plan, source, cfg)?;
        let insertion_labels = oracle_insertions(&masked, target)?;
        Ok(Ok(AlignedRecord {
            source_tokens: source.clone(),
            target_tokens: target.clone(),
            plan,
            masked_input: masked.tokens,
            insertion_labels,
        }))
    }

    /// Rebuilds the insertion input and checks it against the stored one.
    pub fn masked(&self, cfg: &AlignmentConfig) -> Result<MaskedSeq> {
        let masked = masked_input(&self.plan, &self.source_tokens, cfg)?;
        if masked.tokens != self.masked_input {
            return Err(Error::Data(format!(
                "stored insertion input `{}` does not match the plan under the current config (`{}`)",
                self.masked_input, masked.tokens
            )));
        }
        if masked.mask_count() != self.insertion_labels.len() {
            return Err(Error::PredictionCount {
                expected: masked.mask_count(),
                got: self.insertion_labels.len(),
            });
        }
        Ok(masked)
    }
}

fn masked_input(plan: &EditPlan, source: &TokenSeq, cfg: &AlignmentConfig) -> Result<MaskedSeq> {
    plan.check_mode(cfg.mode)?;
    let chain = daisy_chain(plan)?;
    let skeleton = chain_to_skeleton(&chain, plan, source)?;
    build_insertion_input(&skeleton, cfg)
}

/// Reads one JSON value per non-blank line. Errors carry the line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| json_error(path, i + 1, &e))?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::Data(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a JSON document with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| json_error(path, e.line(), &e))
}

/// serde_json appends its own position, which is relative to the parsed
/// string rather than the file.
fn json_error(path: &Path, line: usize, e: &serde_json::Error) -> Error {
    let text = e.to_string();
    let suffix = format!(" at line {} column {}", e.line(), e.column());
    Error::Json {
        path: path.to_path_buf(),
        line,
        column: e.column(),
        message: text.strip_suffix(&suffix).unwrap_or(&text).to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edit::InsertionMode;
    use crate::text::tokenize;

    #[test]
    fn aligned_record_round_trips_through_json() {
        let rec = AlignedRecord::build(
            &tokenize("The big very loud cat"),
            &tokenize("The noisy large cat"),
            &AlignmentConfig::default(),
        )
        .unwrap()
        .unwrap();
        assert_eq!(
            rec.masked_input.to_string(),
            "The [REPL] big very loud [/REPL] [MASK] [MASK] cat"
        );
        assert_eq!(rec.insertion_labels, vec!["noisy", "large"]);
        let line = serde_json::to_string(&rec).unwrap();
        assert!(
            line.contains(r#""tags":["KEEP","DEL","DEL","DEL+INS_2","KEEP"]"#),
            "{line}"
        );
        let back: AlignedRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, rec);
        assert!(back.masked(&AlignmentConfig::default()).is_ok());
        let infill = AlignmentConfig {
            mode: InsertionMode::Infilling,
            ..AlignmentConfig::default()
        };
        assert!(back.masked(&infill).is_err());
    }

    #[test]
    fn jsonl_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, "{\"source\": \"a b\"}\n\n{\"source\": 3}\n").unwrap();
        let err = read_jsonl::<CorpusRecord>(&path).unwrap_err();
        assert!(matches!(err, Error::Json { line: 3, .. }), "{err}");
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let recs = vec![
            CorpusRecord {
                source: "a b".into(),
                target: Some("b".into()),
            },
            CorpusRecord {
                source: "c".into(),
                target: None,
            },
        ];
        write_jsonl(&path, &recs).unwrap();
        assert_eq!(read_jsonl::<CorpusRecord>(&path).unwrap(), recs);
    }
}
