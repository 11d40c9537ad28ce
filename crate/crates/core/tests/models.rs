mod common;

use common::{check_gradients, jitter};
use felix::models::{EncoderConfig, InsertionExample, InsertionModel, Params, Tagger, TaggerExample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(vocab_size: usize) -> EncoderConfig {
    EncoderConfig {
        vocab_size,
        dim: 8,
        layers: 1,
        heads: 2,
        ffn_dim: 16,
        max_len: 16,
    }
}

fn tagger_example(rng: &mut impl Rng, vocab: usize, tags: usize) -> TaggerExample {
    let n = rng.random_range(2..8);
    let mut ids = vec![2];
    ids.extend((0..n).map(|_| rng.random_range(6..vocab)));
    TaggerExample {
        tags: (0..=n).map(|_| rng.random_range(0..tags)).collect(),
        pointers: (0..=n)
            .map(|_| rng.random_bool(0.7).then(|| rng.random_range(1..=n)))
            .collect(),
        ids,
    }
}

#[test]
fn tagger_gradients_match_finite_differences() {
    for (seed, extra) in [(1, false), (2, true)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Tagger::new(&mut rng, small(12), 6, extra).unwrap();
        jitter(&mut model, &mut rng, 0.1);
        let ex = tagger_example(&mut rng, 12, 6);
        let mut grad = model.clone();
        grad.zero();
        model.loss(&ex, true, Some(&mut grad)).unwrap();
        let report = check_gradients(&model, &grad, |m| m.loss(&ex, true, None).unwrap().total());
        assert!(report.max_rel_error < 1e-3, "{report:?}");
    }
}

#[test]
fn insertion_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut model = InsertionModel::new(&mut rng, small(12)).unwrap();
    jitter(&mut model, &mut rng, 0.1);
    let ex = InsertionExample {
        ids: vec![2, 7, 4, 8, 5, 3, 3, 9],
        mask_rows: vec![5, 6],
        labels: vec![10, 11],
    };
    let mut grad = model.clone();
    grad.zero();
    model.loss(&ex, Some(&mut grad)).unwrap();
    let report = check_gradients(&model, &grad, |m| m.loss(&ex, None).unwrap());
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

use felix::corpus::AlignedRecord;
use felix::edit::InsertionMode;
use felix::models::checkpoint::Checkpoint;
use felix::models::tensor::argmax;
use felix::models::{train, FelixModels, Hyperparams};
use felix::text::{tokenize, TokenSeq};
use felix::Error;

fn hyper(steps: usize) -> Hyperparams {
    Hyperparams {
        steps,
        dim: 32,
        heads: 4,
        ffn_dim: 64,
        learning_rate: 0.05,
        ..Hyperparams::default()
    }
}

fn records(pairs: &[(&str, &str)], h: &Hyperparams) -> Vec<AlignedRecord> {
    pairs
        .iter()
        .map(|(s, t)| {
            AlignedRecord::build(&tokenize(s), &tokenize(t), &h.alignment())
                .unwrap()
                .unwrap()
        })
        .collect()
}

fn fit(pairs: &[(&str, &str)], h: &Hyperparams) -> FelixModels {
    train(&records(pairs, h), h, |_| {}).unwrap()
}

fn bits(model: &impl Params) -> Vec<u64> {
    model
        .named_params()
        .iter()
        .flat_map(|(_, m)| m.data.iter().map(|x| x.to_bits()))
        .collect()
}

const REPLACE: (&str, &str) = ("The big very loud cat", "The noisy large cat");
const REORDER: (&str, &str) = ("The big very loud cat", "The very big cat");

#[test]
fn zero_weights_give_uniform_logits_and_tag_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut t = Tagger::new(&mut rng, small(10), 18, false).unwrap();
    t.zero();
    let h = t.encode(&[2, 6, 7]).unwrap();
    let (logits, tags) = t.predict_tags(&h);
    assert!(logits.data.iter().all(|&x| x == 0.0));
    assert_eq!(tags, vec![0, 0, 0]);
}

#[test]
fn uniform_predictions_cost_log_classes() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut t = Tagger::new(&mut rng, small(10), 18, false).unwrap();
    t.zero();
    let ex = TaggerExample {
        ids: vec![2, 6, 7, 8],
        tags: vec![0, 3, 1, 0],
        pointers: vec![Some(1), Some(3), None, None],
    };
    let loss = t.loss(&ex, true, None).unwrap();
    assert!((loss.tag - 18f64.ln()).abs() < 1e-12);
    assert!((loss.pointer - 4f64.ln()).abs() < 1e-12);

    let mut m = InsertionModel::new(&mut rng, small(10)).unwrap();
    m.zero();
    let ex = InsertionExample {
        ids: vec![2, 6, 3, 3],
        mask_rows: vec![2, 3],
        labels: vec![7, 9],
    };
    assert!((m.loss(&ex, None).unwrap() - 10f64.ln()).abs() < 1e-12);
}

#[test]
fn confident_correct_predictions_cost_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut m = InsertionModel::new(&mut rng, small(10)).unwrap();
    m.zero();
    m.head.b.data[7] = 1000.0;
    let ex = InsertionExample {
        ids: vec![2, 6, 3],
        mask_rows: vec![2],
        labels: vec![7],
    };
    assert!(m.loss(&ex, None).unwrap() < 1e-12);
}

#[test]
fn pointer_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut t = Tagger::new(&mut rng, small(12), 18, true).unwrap();
    jitter(&mut t, &mut rng, 0.3);
    let h = t.encode(&[2, 6, 7, 8, 9, 10]).unwrap();
    let p = t.pointer_scores(&h, &[0, 1, 2, 3, 4, 5]).unwrap();
    assert_eq!(p.shape(), (6, 6));
    for r in 0..6 {
        assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn identical_queries_give_identical_pointer_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut t = Tagger::new(&mut rng, small(12), 18, false).unwrap();
    t.query.w.fill(0.0);
    for b in &mut t.query.b.data {
        *b = rng.random_range(-1.0..1.0);
    }
    let h = t.encode(&[2, 6, 7, 8]).unwrap();
    let p = t.pointer_scores(&h, &[0, 1, 2, 3]).unwrap();
    for r in 1..4 {
        assert_eq!(p.row(r), p.row(0));
    }
}

#[test]
fn no_masks_means_no_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let m = InsertionModel::new(&mut rng, small(10)).unwrap();
    assert_eq!(m.logits(&[2, 6, 7], &[]).unwrap().rows, 0);
}

#[test]
fn mask_logits_do_not_depend_on_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let m = InsertionModel::new(&mut rng, small(12)).unwrap();
    let ids = [2, 6, 3, 3, 7];
    let before = m.logits(&ids, &[2, 3]).unwrap();
    for labels in [vec![8, 9], vec![9, 8], vec![10, 10]] {
        let ex = InsertionExample {
            ids: ids.to_vec(),
            mask_rows: vec![2, 3],
            labels,
        };
        m.loss(&ex, None).unwrap();
        assert_eq!(m.logits(&ids, &[2, 3]).unwrap(), before);
    }
}

#[test]
fn argmax_ignores_constant_shifts() {
    assert_eq!(argmax(&[0.1, 0.9, 0.1]), 1);
    let h = hyper(150);
    let mut models = fit(&[REPLACE, REORDER], &h);
    let src = tokenize(REPLACE.0);
    let before = models.predict(&src).unwrap();
    for b in &mut models.tagger.tag_head.b.data {
        *b += 3.5;
    }
    for b in &mut models.inserter.head.b.data {
        *b -= 7.25;
    }
    assert_eq!(models.predict(&src).unwrap(), before);
}

#[test]
fn training_is_deterministic() {
    let h = hyper(40);
    let a = fit(&[REPLACE, REORDER], &h);
    let b = fit(&[REPLACE, REORDER], &h);
    assert_eq!(bits(&a.tagger), bits(&b.tagger));
    assert_eq!(bits(&a.inserter), bits(&b.inserter));
    let c = fit(&[REPLACE, REORDER], &Hyperparams { seed: 1, ..h });
    assert_ne!(bits(&a.tagger), bits(&c.tagger));
}

#[test]
fn one_repeated_example_is_memorized() {
    let h = hyper(300);
    let mut last = Vec::new();
    train(&records(&[REPLACE], &h), &h, |s| last.push((s.model, s.loss))).unwrap();
    for kind in ["tagger", "insertion"] {
        let final_loss = last.iter().rev().find(|(m, _)| m.to_string() == kind).unwrap().1;
        assert!(final_loss < 0.01, "{kind} loss {final_loss}");
    }
}

#[test]
fn overfit_replacement_example() {
    for mode in [InsertionMode::Masking, InsertionMode::Infilling] {
        let h = Hyperparams {
            mode,
            max_span: 4,
            ..hyper(300)
        };
        let models = fit(&[REPLACE], &h);
        let p = models.predict(&tokenize(REPLACE.0)).unwrap();
        assert_eq!(p.tokens.to_string(), "The noisy large cat", "{mode}");
        let tags: Vec<String> = p.plan.tags.iter().map(|t| t.to_string()).collect();
        let ins = if mode == InsertionMode::Masking {
            "DEL+INS_2"
        } else {
            "DEL+INS"
        };
        assert_eq!(tags, ["KEEP", "DEL", "DEL", ins, "KEEP"]);
        if mode == InsertionMode::Masking {
            assert_eq!(models.fill(&p.masked).unwrap(), ["noisy", "large"]);
        }
    }
}

#[test]
fn overfit_reordering_example() {
    let h = hyper(300);
    let models = fit(&[REORDER], &h);
    let src = tokenize(REORDER.0);
    let p = models.predict(&src).unwrap();
    assert_eq!(p.tokens.to_string(), "The very big cat");
    assert_eq!(p.chain.0, vec![0, 1, 3, 2, 5]);

    let ids = models.vocab.encode(&src.with_cls());
    let hidden = models.tagger.encode(&ids).unwrap();
    let (_, tags) = models.tagger.predict_tags(&hidden);
    let scores = models.tagger.pointer_scores(&hidden, &tags).unwrap();
    for (from, to) in [(0, 1), (1, 3), (3, 2), (2, 5)] {
        assert_eq!(argmax(scores.row(from)), to, "edge from {from}");
    }
}

#[test]
fn identity_corpus_copies() {
    let pairs = [
        ("a b c", "a b c"),
        ("c a", "c a"),
        ("b b a c", "b b a c"),
        ("a", "a"),
    ];
    let models = fit(&pairs, &hyper(200));
    for (s, _) in pairs {
        assert_eq!(models.predict(&tokenize(s)).unwrap().tokens, tokenize(s));
    }
}

#[test]
fn without_pointing_output_keeps_source_order() {
    let h = Hyperparams {
        pointing: false,
        ..hyper(100)
    };
    let models = fit(&[REPLACE, REORDER], &h);
    for src in ["The big very loud cat", "loud cat The very big"] {
        let chain = models.predict(&tokenize(src)).unwrap().chain.0;
        assert!(chain.windows(2).all(|w| w[0] < w[1]), "{chain:?}");
    }
}

#[test]
fn checkpoints_round_trip_and_validate() {
    let h = hyper(30);
    let models = fit(&[REPLACE, REORDER], &h);
    let dir = tempfile::tempdir().unwrap();
    let (tp, ip) = (dir.path().join("t.json"), dir.path().join("i.json"));
    Checkpoint::tagger(&models, serde_json::Value::Null)
        .save(&tp)
        .unwrap();
    Checkpoint::insertion(&models, serde_json::Value::Null)
        .save(&ip)
        .unwrap();
    let tagger = Checkpoint::load(&tp).unwrap();
    let inserter = Checkpoint::load(&ip).unwrap();
    let loaded = Checkpoint::assemble(&tagger, &inserter).unwrap();
    assert_eq!(loaded, models);

    assert!(Checkpoint::assemble(&inserter, &tagger).is_err());

    let mut bad = tagger.clone();
    bad.tensors[0].shape[0] += 1;
    assert!(matches!(bad.to_tagger(), Err(Error::Shape(_))));

    let mut other = inserter.clone();
    other.vocabulary.insert("zebra");
    assert!(Checkpoint::assemble(&tagger, &other).is_err());
}

#[test]
fn divergent_training_reports_non_finite_loss() {
    let h = Hyperparams {
        learning_rate: 1e300,
        clip_norm: 0.0,
        ..hyper(20)
    };
    let err = train(&records(&[REPLACE, REORDER], &h), &h, |_| {}).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
}

#[test]
fn empty_corpus_is_an_error() {
    assert!(matches!(train(&[], &hyper(1), |_| {}), Err(Error::Data(_))));
}

#[test]
fn over_length_input_is_rejected() {
    let models = fit(
        &[REPLACE],
        &Hyperparams {
            max_len: 10,
            ..hyper(5)
        },
    );
    let long = TokenSeq(vec!["cat".to_string(); 12]);
    assert!(matches!(
        models.predict(&long),
        Err(Error::TooLong { len: 13, max: 10 })
    ));
}
