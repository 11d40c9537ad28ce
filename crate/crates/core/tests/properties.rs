mod common;

use common::{random_pair, words};
use felix::align::{align, AlignmentConfig};
use felix::edit::{EditPlan, Insertion, InsertionMode, Tag};
use felix::insertion::{apply_insertion, build_insertion_input, oracle_insertions};
use felix::metrics::{self, SariVariant};
use felix::realize::{beam_realize, chain_to_skeleton, daisy_chain, Chain, PointerScores};
use felix::text::{is_sentinel, TokenSeq, PAD};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(mode: InsertionMode, pointing: bool) -> AlignmentConfig {
    AlignmentConfig {
        mode,
        max_span: 8,
        pointing,
    }
}

fn pair(seed: u64) -> (TokenSeq, TokenSeq) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_pair(&mut rng, &words(12), 10, 6)
}

fn modes() -> impl Strategy<Value = (InsertionMode, bool)> {
    (
        prop_oneof![Just(InsertionMode::Masking), Just(InsertionMode::Infilling)],
        any::<bool>(),
    )
}

fn tokens(max: usize) -> impl Strategy<Value = TokenSeq> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 1..=max)
        .prop_map(|v| TokenSeq(v.into_iter().map(String::from).collect()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn aligned_plans_reconstruct_the_target(seed in any::<u64>(), (mode, pointing) in modes()) {
        let (src, tgt) = pair(seed);
        let c = cfg(mode, pointing);
        if let Some(plan) = align(&src, &tgt, &c).into_plan() {
            plan.validate().unwrap();
            let chain = daisy_chain(&plan).unwrap();
            let mut seen: Vec<usize> = chain.kept().to_vec();
            seen.sort_unstable();
            let kept: Vec<usize> = plan.kept_positions().collect();
            prop_assert_eq!(&seen, &kept);
            if !pointing {
                prop_assert!(chain.kept().windows(2).all(|w| w[0] < w[1]));
            }
            let masked = build_insertion_input(&chain_to_skeleton(&chain, &plan, &src).unwrap(), &c).unwrap();
            let fill = oracle_insertions(&masked, &tgt).unwrap();
            prop_assert_eq!(apply_insertion(&masked, &fill).unwrap(), tgt);
        }
    }

    #[test]
    fn pointing_never_keeps_fewer_tokens(seed in any::<u64>(), infilling in any::<bool>()) {
        let (src, tgt) = pair(seed);
        let mode = if infilling { InsertionMode::Infilling } else { InsertionMode::Masking };
        let on = align(&src, &tgt, &cfg(mode, true)).into_plan();
        let off = align(&src, &tgt, &cfg(mode, false)).into_plan();
        if let (Some(on), Some(off)) = (on, off) {
            prop_assert!(on.kept_positions().count() >= off.kept_positions().count());
        }
    }

    #[test]
    fn unbounded_spans_always_align(seed in any::<u64>(), pointing in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (src, tgt) = random_pair(&mut rng, &words(12), 10, 30);
        let c = AlignmentConfig { mode: InsertionMode::Masking, max_span: usize::MAX, pointing };
        prop_assert!(align(&src, &tgt, &c).plan().is_some());
    }

    #[test]
    fn infilling_labels_stay_padded(seed in any::<u64>()) {
        let (src, tgt) = pair(seed);
        let c = cfg(InsertionMode::Infilling, true);
        if let Some(plan) = align(&src, &tgt, &c).into_plan() {
            let chain = daisy_chain(&plan).unwrap();
            let masked = build_insertion_input(&chain_to_skeleton(&chain, &plan, &src).unwrap(), &c).unwrap();
            let fill = oracle_insertions(&masked, &tgt).unwrap();
            let mut at = 0;
            for span in &masked.spans {
                let labels = &fill[at..at + span.len];
                if let Some(first) = labels.iter().position(|t| t == PAD) {
                    prop_assert!(labels[first..].iter().all(|t| t == PAD));
                }
                at += span.len;
            }
        }
    }

    #[test]
    fn replaced_text_never_reaches_the_output(seed in any::<u64>(), (mode, pointing) in modes()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (src, tgt) = pair(seed);
        let src = TokenSeq(src.iter().map(|t| format!("s{t}")).collect());
        let tgt = TokenSeq(tgt.iter().map(|t| if t.len() % 2 == 0 { format!("s{t}") } else { t.clone() }).collect());
        let c = cfg(mode, pointing);
        if let Some(plan) = align(&src, &tgt, &c).into_plan() {
            let chain = daisy_chain(&plan).unwrap();
            let masked = build_insertion_input(&chain_to_skeleton(&chain, &plan, &src).unwrap(), &c).unwrap();
            let fill: Vec<String> = (0..masked.mask_count())
                .map(|i| if mode == InsertionMode::Infilling && rng.random_bool(0.3) { PAD.to_string() } else { format!("f{i}") })
                .collect();
            let out = apply_insertion(&masked, &fill).unwrap();
            let filled = fill.iter().filter(|t| *t != PAD).count();
            prop_assert_eq!(out.len(), chain.kept().len() + filled);
            prop_assert!(out.iter().all(|t| !is_sentinel(t)));
            let kept: Vec<&String> = chain.kept().iter().map(|&p| &src.0[p - 1]).collect();
            let from_source: Vec<&String> = out.iter().filter(|t| t.starts_with('s')).collect();
            prop_assert_eq!(from_source, kept);
        }
    }

    #[test]
    fn beam_chains_are_loop_free(seed in any::<u64>(), beam in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(0..10);
        let tags: Vec<Tag> = (0..n).map(|_| if rng.random_bool(0.7) { Tag::KEEP } else { Tag::DELETE }).collect();
        let logits: Vec<Vec<f64>> = (0..=n).map(|_| (0..=n).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let scores = PointerScores::from_logits(&logits).unwrap();
        let chain = beam_realize(&scores, &tags, beam).unwrap();
        let mut visited = chain.kept().to_vec();
        visited.sort_unstable();
        prop_assert_eq!(chain.positions()[0], 0);
        prop_assert_eq!(visited, Chain::source_order(&tags).kept().to_vec());

        // Re-chaining the realized pointers reproduces the chain.
        let plan = EditPlan { tags: tags.clone(), cls_insertion: Insertion::None, pointers: chain.to_pointers(n) };
        prop_assert_eq!(daisy_chain(&plan).unwrap(), chain);
    }

    #[test]
    fn argmax_consistent_scores_decode_to_their_chain(seed in any::<u64>(), beam in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..9);
        let tags: Vec<Tag> = (0..n).map(|_| if rng.random_bool(0.7) { Tag::KEEP } else { Tag::DELETE }).collect();
        let mut order = Chain::source_order(&tags).kept().to_vec();
        order.shuffle(&mut rng);
        let mut chain = vec![0];
        chain.extend(order);
        let mut logits: Vec<Vec<f64>> = (0..=n).map(|_| (0..=n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        for w in chain.windows(2) {
            logits[w[0]][w[1]] = 5.0;
        }
        let scores = PointerScores::from_logits(&logits).unwrap();
        prop_assert_eq!(beam_realize(&scores, &tags, beam).unwrap(), Chain(chain));
    }

    #[test]
    fn ter_never_exceeds_plain_edit_distance(p in tokens(7), r in tokens(7)) {
        let with = metrics::ter_counts(p.as_slice(), r.as_slice(), metrics::TER_MAX_SHIFT);
        let without = metrics::ter_counts(p.as_slice(), r.as_slice(), 0);
        prop_assert_eq!(without.shift, 0);
        prop_assert!(with.total() <= without.total());
    }

    #[test]
    fn corpus_metrics_ignore_example_order(
        triples in prop::collection::vec((tokens(6), tokens(6), tokens(6)), 1..8),
        seed in any::<u64>(),
    ) {
        let score = |t: &[(TokenSeq, TokenSeq, TokenSeq)]| {
            let src: Vec<TokenSeq> = t.iter().map(|x| x.0.clone()).collect();
            let pred: Vec<TokenSeq> = t.iter().map(|x| x.1.clone()).collect();
            let refs: Vec<Vec<TokenSeq>> = t.iter().map(|x| vec![x.2.clone()]).collect();
            [
                metrics::corpus_sari(&src, &pred, &refs, SariVariant::Original).unwrap().sari,
                metrics::bleu4(&pred, &refs).unwrap(),
                metrics::rouge_l(&pred, &refs).unwrap(),
                metrics::corpus_ter(&pred, &refs, metrics::TER_MAX_SHIFT).unwrap().ter,
            ]
        };
        let before = score(&triples);
        let mut shuffled = triples.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let after = score(&shuffled);
        for (a, b) in before.iter().zip(&after) {
            prop_assert!((a - b).abs() < 1e-9, "{before:?} vs {after:?}");
        }
        for x in &before[..3] {
            prop_assert!((0.0..=100.0).contains(x));
        }
    }

    #[test]
    fn exact_match_with_itself(preds in prop::collection::vec("[a-z ]{0,12}", 1..6)) {
        prop_assert_eq!(metrics::exact(&preds, &preds).unwrap(), 100.0);
    }
}
