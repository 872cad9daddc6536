use crest_core::corpus::*;
use crest_core::CoreError;
use std::collections::HashSet;
use std::io::Write;

#[test]
fn sentiment_balance_over_10k() {
    let c = gen_sentiment_corpus(21, 10_000, (8, 24), 0.2);
    let pos = c.iter().filter(|e| e.label == 1).count() as f64 / c.len() as f64;
    assert!((pos - 0.5).abs() <= 0.02, "positive share {pos}");
}

#[test]
fn nli_classes_each_at_least_a_quarter() {
    let c = gen_nli_corpus(22, 3000);
    for label in 0..3 {
        let share = c.iter().filter(|e| e.label == label).count() as f64 / c.len() as f64;
        assert!(share >= 0.25, "class {label}: {share}");
    }
}

#[test]
fn oracle_labels_every_example() {
    for e in gen_sentiment_corpus(1, 2000, (8, 24), 0.3) {
        assert_eq!(oracle_label(Task::Sentiment, &e.tokens), Some(e.label));
        assert!(e.rationale.as_ref().unwrap().contains(&1));
    }
    for e in gen_nli_corpus(2, 2000) {
        assert_eq!(oracle_label(Task::Nli, &e.tokens), Some(e.label));
    }
}

#[test]
fn generation_is_a_pure_function_of_seed() {
    assert_eq!(gen_sentiment_corpus(4, 300, (8, 24), 0.2), gen_sentiment_corpus(4, 300, (8, 24), 0.2));
    assert_ne!(gen_sentiment_corpus(4, 300, (8, 24), 0.2), gen_sentiment_corpus(5, 300, (8, 24), 0.2));
    assert_eq!(gen_nli_corpus(4, 300), gen_nli_corpus(4, 300));
}

#[test]
fn splits_are_disjoint_by_id() {
    let c = gen_sentiment_corpus(3, 1000, (8, 24), 0.2);
    let ids = |s| split_of(&c, s).into_iter().map(|e| e.id).collect::<HashSet<_>>();
    let (tr, dv, te) = (ids(Split::Train), ids(Split::Dev), ids(Split::Test));
    assert!(tr.is_disjoint(&dv) && tr.is_disjoint(&te) && dv.is_disjoint(&te));
    assert_eq!(tr.len() + dv.len() + te.len(), 1000);
}

#[test]
fn tokenizer_round_trips_generated_text() {
    let tok = Tokenizer::default();
    let mut all = gen_sentiment_corpus(6, 300, (8, 24), 0.2);
    all.extend(gen_nli_corpus(6, 300));
    let vocab = build_vocab(&all);
    for e in &all {
        assert_eq!(tok.tokenize(&tok.detokenize(&e.tokens)), e.tokens);
        assert_eq!(vocab.decode(&vocab.encode(&e.tokens)).unwrap(), e.tokens);
    }
}

#[test]
fn jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("nli.jsonl");
    let c = gen_nli_corpus(8, 50);
    write_examples(&p, Task::Nli, &c).unwrap();
    assert_eq!(read_examples(&p, Task::Nli).unwrap(), c);
}

#[test]
fn missing_label_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.jsonl");
    let mut f = std::fs::File::create(&p).unwrap();
    writeln!(f, r#"{{"id":"a","text":"good film .","label":"positive","split":"train"}}"#).unwrap();
    writeln!(f, r#"{{"id":"b","text":"bad film .","split":"train"}}"#).unwrap();
    drop(f);
    match read_examples(&p, Task::Sentiment) {
        Err(CoreError::Parse { line, message, .. }) => {
            assert_eq!(line, 2);
            assert!(message.contains("label"), "{message}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn pair_files_parse() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pairs.jsonl");
    std::fs::write(
        &p,
        concat!(
            r#"{"id":"s1","text":"the film was great","label":"positive","counterfactual":"the film was awful","counterfactual_label":"negative","rationale_mask":[0,0,0,1],"counterfactual_mask":[0,0,0,1],"valid":true}"#,
            "\n",
            r#"{"id":"s2","text":"a dull plot","label":"negative","counterfactual":"a moving plot","counterfactual_label":"positive","rationale_mask":[0,1,0],"counterfactual_mask":[0,1,0],"valid":null}"#,
            "\n"
        ),
    )
    .unwrap();
    let pairs = read_pairs(&p, Task::Sentiment).unwrap();
    assert_eq!(pairs.len(), 2);
    assert_eq!(pairs[0].x_cf, ["the", "film", "was", "awful"]);
    assert_eq!((pairs[0].y_f, pairs[0].y_c, pairs[0].valid), (1, 0, Some(true)));
    assert_eq!(pairs[1].valid, None);
    let q = dir.path().join("again.jsonl");
    write_pairs(&q, Task::Sentiment, &pairs).unwrap();
    assert_eq!(read_pairs(&q, Task::Sentiment).unwrap(), pairs);
}

#[test]
fn checkpoint_rejects_wrong_vocabulary() {
    use crest_core::rationalizer::{Rationalizer, RationalizerConfig};
    let a = build_vocab(&gen_sentiment_corpus(1, 50, (8, 12), 0.0));
    let b = build_vocab(&gen_nli_corpus(1, 50));
    let cfg = RationalizerConfig { d: 8, ffn_hidden: 8, max_len: 16, ..Default::default() };
    let m = Rationalizer::new(cfg, a.len(), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    m.save(&p, &a).unwrap();
    let err = Rationalizer::load(&p, &b).unwrap_err();
    assert!(err.to_string().contains("hash"), "{err}");
}
