use std::collections::BTreeSet;

use causeway::corpus::{
    load_corpus, split_corpus, write_corpus, AnnotatedSentence, CorpusFormat, Role, Span,
};
use causeway::harness::{
    build_model, evaluate, generate_synthetic_corpus, predict, score_predictions, train,
    Experiment, Prediction, SyntheticSpec,
};
use causeway::knowledge::{count_ngrams, mine, select_top, MiningConfig};
use causeway::model::{Checkpoint, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> Experiment {
    let mut exp = Experiment {
        model: ModelConfig {
            embed_dim: 8,
            model_dim: 8,
            filters: 4,
            heads: 2,
            hidden: 8,
            windows: vec![2, 3],
            ..ModelConfig::default()
        },
        ..Experiment::default()
    };
    exp.mining.clusters = 2;
    exp.mining.fraction = 0.5;
    exp.train.use_pretrained_encoder = false;
    exp.train.epochs = 2;
    exp
}

#[test]
fn planted_cause_phrases_rank_first() {
    let spec = SyntheticSpec {
        cause_lengths: vec![4],
        ..SyntheticSpec::default()
    };
    let corpus = generate_synthetic_corpus(&spec, 300, 21).unwrap();
    let planted: BTreeSet<Vec<String>> = corpus
        .iter()
        .map(|s| {
            let c = s.cause_spans[0];
            s.tokens[c.start..c.end].to_vec()
        })
        .collect();
    let table = count_ngrams(&corpus, 4).unwrap();
    let ranked = select_top(&table, Role::Cause, 1.0, 1.0).unwrap();
    let top: BTreeSet<Vec<String>> = ranked.ngrams().into_iter().take(planted.len()).collect();
    assert_eq!(top, planted);
}

#[test]
fn saturated_mining_gives_singleton_clusters() {
    let corpus = generate_synthetic_corpus(&SyntheticSpec::default(), 80, 4).unwrap();
    let exp = tiny();
    let mut bare = exp.clone();
    bare.train.use_infusion = false;
    let tagger = build_model(&bare, &corpus, None).unwrap().tagger;
    let table = count_ngrams(&corpus, 2).unwrap();
    let selected = select_top(&table, Role::Cause, 1.0, 1.0)
        .unwrap()
        .items
        .len();
    let cfg = MiningConfig {
        windows: vec![2],
        fraction: 1.0,
        clusters: selected,
        filters: 4,
        ..MiningConfig::default()
    };
    let out = mine(&corpus, &tagger.encoder_view(), &cfg).unwrap();
    for pool in &out.plan.bank.pools {
        assert!(pool.sizes.iter().all(|&s| s == 1), "{:?}", pool.sizes);
        let members: usize = pool.members.iter().map(Vec::len).sum();
        assert_eq!(members, selected);
    }

    let zero = MiningConfig { rho: 0.0, ..cfg };
    assert_eq!(
        mine(&corpus, &tagger.encoder_view(), &zero)
            .unwrap()
            .plan
            .infused_total(),
        0
    );
}

#[test]
fn checkpoint_reload_is_bit_exact() {
    let corpus = generate_synthetic_corpus(&SyntheticSpec::default(), 60, 8).unwrap();
    let splits = split_corpus(&corpus, (0.6, 0.2, 0.2), 2).unwrap();
    let exp = tiny();
    let built = build_model(&exp, &splits.train, None).unwrap();
    let outcome = train(&built.tagger, &splits.train, &splits.dev, &exp.train).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    Checkpoint::new(outcome.best.clone(), outcome.best_epoch)
        .save(&path)
        .unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.tagger.params, outcome.best.params);
    assert_eq!(loaded.plan_hash, outcome.best.plan_hash);
    for s in &splits.test {
        let a = outcome.best.emissions(&s.tokens).unwrap();
        let b = loaded.tagger.emissions(&s.tokens).unwrap();
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(
        evaluate(&outcome.best, &splits.test).unwrap(),
        evaluate(&loaded.tagger, &splits.test).unwrap()
    );
    assert_eq!(
        evaluate(&outcome.best, &splits.dev).unwrap().f1,
        outcome.best_dev().unwrap().f1
    );
}

#[test]
fn corpus_files_round_trip_in_both_formats() {
    let corpus = generate_synthetic_corpus(&SyntheticSpec::default(), 25, 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for format in [CorpusFormat::Jsonl, CorpusFormat::ConllTsv] {
        let path = dir.path().join(format!("{format:?}"));
        write_corpus(&path, &corpus, format).unwrap();
        let back = load_corpus(&path, format).unwrap();
        assert_eq!(back.len(), corpus.len());
        for (a, b) in corpus.iter().zip(&back) {
            assert_eq!(
                (&a.tokens, &a.cause_spans, &a.effect_spans),
                (&b.tokens, &b.cause_spans, &b.effect_spans)
            );
        }
    }
}

/// Non-overlapping cause and effect spans.
fn random_spans(rng: &mut ChaCha8Rng, len: usize) -> (Vec<Span>, Vec<Span>) {
    let mut out = (Vec::new(), Vec::new());
    let mut i = 0;
    while i < len {
        if rng.random_bool(0.3) {
            let end = rng.random_range(i + 1..=len.min(i + 3));
            if rng.random_bool(0.5) {
                out.0.push(Span::new(i, end));
            } else {
                out.1.push(Span::new(i, end));
            }
            i = end;
        } else {
            i += 1;
        }
    }
    out
}

/// Exact-match counts by brute force over all span pairs.
fn oracle_counts(gold: &[AnnotatedSentence], pred: &[Prediction]) -> (usize, usize, usize) {
    let mut tp = 0;
    let mut np = 0;
    let mut ng = 0;
    for (g, (pc, pe)) in gold.iter().zip(pred) {
        for (gs, ps) in [(&g.cause_spans, pc), (&g.effect_spans, pe)] {
            tp += ps.iter().filter(|p| gs.contains(p)).count();
            np += ps.len();
            ng += gs.len();
        }
    }
    (tp, np, ng)
}

#[test]
fn span_scores_match_the_counting_oracle_and_are_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..50 {
        let n = rng.random_range(1..6);
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        let mut flipped_gold = Vec::new();
        let mut flipped_pred = Vec::new();
        for i in 0..n {
            let len = rng.random_range(1..12);
            let tokens: Vec<String> = (0..len).map(|k| format!("t{k}")).collect();
            let (gc, ge) = random_spans(&mut rng, len);
            let (pc, pe) = random_spans(&mut rng, len);
            gold.push(
                AnnotatedSentence::new(format!("g{i}"), tokens.clone(), gc.clone(), ge.clone())
                    .unwrap(),
            );
            pred.push((pc.clone(), pe.clone()));
            flipped_gold.push(AnnotatedSentence::new(format!("p{i}"), tokens, pc, pe).unwrap());
            flipped_pred.push((gc, ge));
        }
        let r = score_predictions(&gold, &pred).unwrap();
        let (tp, np, ng) = oracle_counts(&gold, &pred);
        let p = if np == 0 { 0.0 } else { tp as f64 / np as f64 };
        let rc = if ng == 0 { 0.0 } else { tp as f64 / ng as f64 };
        assert!((r.precision - p).abs() < 1e-12 && (r.recall - rc).abs() < 1e-12);
        let flipped = score_predictions(&flipped_gold, &flipped_pred).unwrap();
        assert!((flipped.precision - r.recall).abs() < 1e-12);
        assert!((flipped.recall - r.precision).abs() < 1e-12);
        assert!((flipped.f1 - r.f1).abs() < 1e-12);
    }
}

#[test]
fn gold_predictions_score_one() {
    let corpus = generate_synthetic_corpus(&SyntheticSpec::default(), 20, 3).unwrap();
    let perfect: Vec<Prediction> = corpus
        .iter()
        .map(|s| (s.cause_spans.clone(), s.effect_spans.clone()))
        .collect();
    assert_eq!(score_predictions(&corpus, &perfect).unwrap().f1, 1.0);
    let built = build_model(&tiny(), &corpus, None).unwrap();
    assert_eq!(predict(&built.tagger, &corpus).unwrap().len(), corpus.len());
}
