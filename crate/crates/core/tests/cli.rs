use std::path::Path;
use std::process::{Command, Output};

use felix::cli::{self, CorpusStats, Meta, PredictionRecord};
use felix::corpus::read_jsonl;
use felix::metrics::MetricReport;
use serde_json::Value;

const TINY: &[&str] = &["--steps", "60", "--dim", "16", "--heads", "2", "--ffn-dim", "32"];

fn felix(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_felix"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn corpus(dir: &Path, name: &str, pairs: &[(&str, &str)]) {
    let text: String = pairs
        .iter()
        .map(|(s, t)| serde_json::json!({ "source": s, "target": t }).to_string() + "\n")
        .collect();
    std::fs::write(dir.join(name), text).unwrap();
}

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const REPLACE: (&str, &str) = ("The big very loud cat", "The noisy large cat");

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&felix(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&felix(dir.path(), &["align", "--input", "x.jsonl"])), 1);
    corpus(dir.path(), "c.jsonl", &[REPLACE]);
    let out = felix(
        dir.path(),
        &[
            "align", "--input", "c.jsonl", "--output", "a.jsonl", "--mode", "sideways",
        ],
    );
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    std::fs::write(dir.path().join("bad.toml"), "learning_rat = 0.1\n").unwrap();
    let out = felix(
        dir.path(),
        &[
            "--config", "bad.toml", "align", "--input", "c.jsonl", "--output", "a.jsonl",
        ],
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("learning_rat"), "{}", stderr(&out));
    assert_eq!(code(&felix(dir.path(), &["--help"])), 0);
}

#[test]
fn malformed_json_is_a_data_error_naming_the_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.jsonl"),
        "{\"source\": \"a b\", \"target\": \"a\"}\n{\"source\": \"a b\", \"target\": \n",
    )
    .unwrap();
    let out = felix(
        dir.path(),
        &["align", "--input", "c.jsonl", "--output", "a.jsonl"],
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
    let out = felix(
        dir.path(),
        &["align", "--input", "missing.jsonl", "--output", "a.jsonl"],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn long_insertions_are_counted_not_aligned() {
    let dir = tempfile::tempdir().unwrap();
    corpus(
        dir.path(),
        "c.jsonl",
        &[("a b", "a x1 x2 x3 x4 x5 x6 x7 x8 x9 b"), REPLACE],
    );
    let out = felix(
        dir.path(),
        &["align", "--input", "c.jsonl", "--output", "a.jsonl"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let meta: Meta<cli::AlignSummary> = cli::read_meta(&dir.path().join("a.jsonl")).unwrap();
    assert_eq!(meta.summary.stats.pairs, 2);
    assert_eq!(meta.summary.stats.aligned, 1);
    assert_eq!(meta.summary.stats.skipped.get("InsertionSpanTooLong"), Some(&1));
    assert_eq!(meta.command, "align");
    let lines: Vec<Value> = read_jsonl(&dir.path().join("a.jsonl")).unwrap();
    assert_eq!(lines.len(), 1);
    assert_eq!(
        lines[0]["insertion_labels"],
        serde_json::json!(["noisy", "large"])
    );

    let out = felix(
        dir.path(),
        &[
            "align",
            "--input",
            "c.jsonl",
            "--output",
            "b.jsonl",
            "--max-span",
            "unbounded",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let meta: Meta<cli::AlignSummary> = cli::read_meta(&dir.path().join("b.jsonl")).unwrap();
    assert_eq!(meta.summary.stats.coverage_percent, 100.0);
}

#[test]
fn stats_of_identity_and_replacement_corpora() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), "id.jsonl", &[("a b c", "a b c"), ("d e", "d e")]);
    corpus(dir.path(), "replace.jsonl", &[REPLACE]);
    for name in ["id", "replace"] {
        let out = felix(
            dir.path(),
            &[
                "stats",
                "--input",
                &format!("{name}.jsonl"),
                "--output",
                &format!("{name}.json"),
            ],
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let id: CorpusStats = read(&dir.path().join("id.json"));
    assert_eq!(id.ter.ter, 0.0);
    assert_eq!(id.modes.len(), 4);
    for m in &id.modes {
        assert_eq!((m.coverage_percent, m.mask_percent), (100.0, 0.0));
    }
    let replace: CorpusStats = read(&dir.path().join("replace.json"));
    assert_eq!(replace.modes[0].mask_percent, 50.0);
    assert_eq!(replace.mean_source_len, 5.0);
    let text = std::fs::read_to_string(dir.path().join("replace.txt")).unwrap();
    assert!(text.contains("mask_masking_pointing: 50.0000"), "{text}");
}

#[test]
fn evaluating_references_against_themselves() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), "c.jsonl", &[REPLACE, ("a b c", "c b a")]);
    std::fs::write(
        dir.path().join("p.jsonl"),
        "{\"source\": \"The big very loud cat\", \"prediction\": \"The noisy large cat\"}\n\
         {\"source\": \"a b c\", \"prediction\": \"c b a\"}\n",
    )
    .unwrap();
    let out = felix(
        dir.path(),
        &[
            "evaluate",
            "--predictions",
            "p.jsonl",
            "--references",
            "c.jsonl",
            "--output",
            "r.json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: MetricReport = read(&dir.path().join("r.json"));
    assert_eq!(report.exact, 100.0);
    assert_eq!(report.ter.ter, 0.0);
    assert_eq!(report.bleu4, 100.0);
    assert!(std::fs::read_to_string(dir.path().join("r.txt"))
        .unwrap()
        .contains("exact: 100.0000"));

    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let out = felix(
        dir.path(),
        &[
            "evaluate",
            "--predictions",
            "empty.jsonl",
            "--references",
            "c.jsonl",
            "--output",
            "e.json",
        ],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn train_predict_round_trip_and_pointing_switch() {
    let dir = tempfile::tempdir().unwrap();
    corpus(
        dir.path(),
        "c.jsonl",
        &[
            REPLACE,
            ("The very big cat", "The big cat"),
            ("a big dog", "a large dog"),
        ],
    );
    let run = |args: &[&str]| {
        let mut all = args.to_vec();
        all.extend_from_slice(TINY);
        let out = felix(dir.path(), &all);
        assert_eq!(code(&out), 0, "{args:?}: {}", stderr(&out));
    };
    run(&["align", "--input", "c.jsonl", "--output", "a.jsonl"]);
    run(&["train", "--input", "a.jsonl", "--output-dir", "m"]);
    for f in [cli::TAGGER_CHECKPOINT, cli::INSERTION_CHECKPOINT, cli::LOSS_LOG] {
        assert!(dir.path().join("m").join(f).exists(), "{f}");
    }
    let tagger: Value = read(&dir.path().join("m").join(cli::TAGGER_CHECKPOINT));
    assert_eq!(tagger["config"]["steps"], 60);

    run(&[
        "predict",
        "--input",
        "c.jsonl",
        "--model-dir",
        "m",
        "--output",
        "p.jsonl",
    ]);
    let preds: Vec<PredictionRecord> = read_jsonl(&dir.path().join("p.jsonl")).unwrap();
    assert_eq!(preds.len(), 3);
    assert_eq!(preds[0].source, REPLACE.0);
    assert_eq!(preds[0].tags.len(), 5);

    run(&[
        "predict",
        "--input",
        "c.jsonl",
        "--model-dir",
        "m",
        "--output",
        "q.jsonl",
        "--pointing",
        "false",
    ]);
    let meta: Meta<cli::PredictSummary> = cli::read_meta(&dir.path().join("q.jsonl")).unwrap();
    assert!(!meta.summary.pointing);
    assert!(!meta.config.pointing);
    for p in read_jsonl::<PredictionRecord>(&dir.path().join("q.jsonl")).unwrap() {
        assert!(p.chain.windows(2).all(|w| w[0] < w[1]), "{:?}", p.chain);
    }
}

#[test]
fn predict_rejects_a_missing_model() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), "c.jsonl", &[REPLACE]);
    let out = felix(
        dir.path(),
        &[
            "predict",
            "--input",
            "c.jsonl",
            "--model-dir",
            "nope",
            "--output",
            "p.jsonl",
        ],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn divergent_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), "c.jsonl", &[REPLACE]);
    assert_eq!(
        code(&felix(
            dir.path(),
            &["align", "--input", "c.jsonl", "--output", "a.jsonl"]
        )),
        0
    );
    let out = felix(
        dir.path(),
        &[
            "train",
            "--input",
            "a.jsonl",
            "--output-dir",
            "m",
            "--learning-rate",
            "1e300",
            "--clip-norm",
            "0",
            "--steps",
            "20",
            "--dim",
            "16",
            "--heads",
            "2",
            "--ffn-dim",
            "32",
        ],
    );
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}
