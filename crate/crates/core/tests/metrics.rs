mod common;

use common::{metric_kernel_deviations, oracle_bleu};
use crest_core::corpus::{build_vocab, gen_sentiment_corpus, split_of, Split};
use crest_core::metrics::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[test]
fn kernels_match_brute_force_oracles() {
    for (name, dev) in metric_kernel_deviations(17, 100) {
        assert!(dev <= 1e-9, "{name}: {dev}");
    }
}

#[test]
fn near_duplicate_pair_bleu() {
    let texts = vec![words("a b c d"), words("a b c e")];
    let expected = (0.75f64 * (2.0 / 3.0) * 0.5 * BLEU_EPSILON).powf(0.25);
    assert!((self_bleu(&texts).unwrap() - expected).abs() < 1e-12);
    assert!((oracle_bleu(&texts[0], &[&texts[1]], BLEU_EPSILON) - expected).abs() < 1e-12);
}

#[test]
fn replacing_a_duplicate_with_disjoint_text_lowers_self_bleu() {
    let same = vec![words("the plot was great fun"); 3];
    let mut mixed = same.clone();
    mixed[2] = words("x y z w v");
    assert!(self_bleu(&mixed).unwrap() < self_bleu(&same).unwrap() - 1e-6);
    assert!(self_bleu(&[words("a b"), words("c d")]).unwrap() < 1e-6);
}

#[test]
fn auc_invariant_under_monotone_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let n = rng.gen_range(3..15);
        let mut gold: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect();
        gold[0] = 0;
        gold[1] = 1;
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() + 1.0).collect();
        assert_eq!(plausibility_auc(&s, &gold).unwrap(), plausibility_auc(&t, &gold).unwrap());
    }
}

#[test]
fn in_distribution_text_is_more_fluent_than_shuffled() {
    let corpus = gen_sentiment_corpus(31, 1200, (8, 24), 0.2);
    let train: Vec<Vec<String>> = split_of(&corpus, Split::Train).into_iter().map(|e| e.tokens).collect();
    let lm = NgramLM::train(&train);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let held = gen_sentiment_corpus(32, 200, (8, 24), 0.2);
    let better = held
        .iter()
        .filter(|e| {
            let mut s = e.tokens.clone();
            s.shuffle(&mut rng);
            lm.perplexity(&e.tokens).unwrap() < lm.perplexity(&s).unwrap()
        })
        .count();
    assert!(better >= 180, "{better}/200");
}

#[test]
fn fluency_ignores_text_order_and_single_token_is_inverse_probability() {
    let corpus = gen_sentiment_corpus(3, 200, (8, 24), 0.2);
    let texts: Vec<Vec<String>> = corpus.iter().map(|e| e.tokens.clone()).collect();
    let lm = NgramLM::train(&texts[..150]);
    let mut rev = texts[150..].to_vec();
    let fwd = fluency_ppl(&rev, &lm).unwrap();
    rev.reverse();
    assert!((fluency_ppl(&rev, &lm).unwrap() - fwd).abs() < 1e-9 * fwd);
    let w = &texts[0][0];
    let p = lm.prob(None, w);
    assert!((lm.perplexity(&[w.as_str()]).unwrap() - 1.0 / p).abs() < 1e-9 / p);
}

#[test]
fn forward_simulability_cases() {
    let corpus = gen_sentiment_corpus(9, 1000, (8, 24), 0.0);
    let vocab = build_vocab(&corpus);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mk = |random: bool, rng: &mut ChaCha8Rng| -> Vec<SimulationExample> {
        corpus
            .iter()
            .map(|e| {
                let gold = e.rationale.clone().unwrap();
                let rationale = if random {
                    let k = gold.iter().filter(|&&b| b == 1).count();
                    let mut idx: Vec<usize> = (0..gold.len()).collect();
                    idx.shuffle(rng);
                    let mut r = vec![0u8; gold.len()];
                    for &i in &idx[..k] {
                        r[i] = 1;
                    }
                    r
                } else {
                    gold
                };
                SimulationExample { tokens: vocab.encode(&e.tokens), rationale, teacher: e.label }
            })
            .collect()
    };
    let gold = mk(false, &mut rng);
    let random = mk(true, &mut rng);
    let (train_g, test_g) = gold.split_at(500);
    let (train_r, test_r) = random.split_at(500);
    let sg = forward_simulability(&LinearStudent::fit(train_g, vocab.len(), 2, 200, 1.0), test_g).unwrap();
    let sr = forward_simulability(&LinearStudent::fit(train_r, vocab.len(), 2, 200, 1.0), test_r).unwrap();
    assert!(sg > sr, "gold {sg} random {sr}");

    let copy = |t: &[usize], _z: &[u8]| gold.iter().find(|e| e.tokens == t).unwrap().teacher;
    assert_eq!(forward_simulability(&copy, test_g).unwrap(), 1.0);
    let flipped = |t: &[usize], _z: &[u8]| 1 - gold.iter().find(|e| e.tokens == t).unwrap().teacher;
    assert!(forward_simulability(&flipped, test_g).unwrap() <= 0.1);
}

#[test]
fn counterfactual_simulability_identity_is_zero() {
    let inputs: Vec<Vec<usize>> = (0..6).map(|i| vec![i, i + 1]).collect();
    let r = counterfactual_simulability(&inputs, |x| Ok((x[0] % 2, vec![1, 0])), |x, _, _| Ok(x.to_vec())).unwrap();
    assert_eq!((r.rate, r.evaluated, r.failed), (0.0, 6, 0));
}

proptest! {
    #[test]
    fn closeness_symmetric_and_bounded(a in prop::collection::vec(0u8..4, 0..10), b in prop::collection::vec(0u8..4, 0..10)) {
        let c = closeness(&a, &b);
        prop_assert_eq!(c, closeness(&b, &a));
        prop_assert!((0.0..=1.0).contains(&c));
    }
}
