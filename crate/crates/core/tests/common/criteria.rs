//! Oracle comparisons at the sizes the acceptance report states. Each check
//! panics on disagreement and returns a one-line summary otherwise.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use labelstat::corpus::{load_conll, AnnotatedSentence, ConllOptions};
use labelstat::eval::{bootstrap_ci, classify_errors, strict_f1, SentenceEval};
use labelstat::fixtures::{fixture_t1, newswire_types};
use labelstat::llm::{HashedEmbedder, VectorTable};
use labelstat::retriever::{
    Bm25Index, Bm25Params, KateRetriever, LabelGuidedRetriever, RetrievalConfig, Retriever, ScoredDemo,
};
use labelstat::stats::{extract_entity_spans, StatsConfig, TokenStats};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles::{self, LabelGuidedOracle};
use super::props::eval_set;
use super::synth::{noisy_eval, random_corpus};

/// Label statistics of the three-sentence fixture against a window scan.
pub fn t1_stats_match_oracle() -> String {
    let t1 = fixture_t1();
    let started = Instant::now();
    let stats = TokenStats::build(&t1.train, &StatsConfig::default());
    let elapsed = started.elapsed();
    let oracle = oracles::token_counts(&t1.train, 2);
    assert_eq!(stats.vocabulary_len(), oracle.len());
    for (tok, &(e, c, o)) in &oracle {
        let got = stats.get(tok).unwrap_or_else(|| panic!("{tok} missing"));
        assert_eq!((got.entity, got.context, got.other), (e, c, o), "{tok}");
    }
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    format!("{} distinct tokens, all three counts equal, built in {elapsed:?}", oracle.len())
}

pub fn t1_entity_spans() -> String {
    let t1 = fixture_t1();
    let spans = extract_entity_spans(&t1.train[1], &StatsConfig::default());
    let rendered: Vec<&str> = spans.iter().map(|s| s.rendered.as_str()).collect();
    assert_eq!(rendered, ["Lionel Messi and", "and Cristiano Ronaldo are exceptional"]);
    format!("{rendered:?}")
}

/// Counts of two reference tokens in a full CoNLL-2003 training file.
/// `None` when no file is configured.
pub fn conll03_reference_counts() -> Option<String> {
    let path = std::env::var_os("CONLL03_TRAIN")?;
    let train = load_conll(&path, &newswire_types(), &ConllOptions::default()).expect("CONLL03_TRAIN loads");
    let stats = TokenStats::build(&train, &StatsConfig::default());
    let counts = |t: &str| {
        let c = stats.counts_or_zero(t);
        (c.entity, c.context, c.other)
    };
    assert_eq!(counts("Italian"), (35, 0, 0), "Italian");
    assert_eq!(counts("city"), (0, 44, 20), "city");
    Some(format!("{} sentences; Italian 35/0/0, city 0/44/20", train.len()))
}

fn table(texts: impl IntoIterator<Item = String>, dim: usize) -> (VectorTable, HashMap<String, Vec<f64>>) {
    let e = HashedEmbedder::new(dim);
    let plain: HashMap<String, Vec<f64>> = texts
        .into_iter()
        .map(|t| {
            let v = e.embed_one(&t);
            (t, v)
        })
        .collect();
    let shared = VectorTable::from_pairs(plain.iter().map(|(t, v)| (t.clone(), Arc::from(v.as_slice())))).unwrap();
    (shared, plain)
}

fn same_ranking(kind: &str, qid: &str, got: &[ScoredDemo], want: &[(String, f64)]) {
    let g: Vec<(&str, f64)> = got.iter().map(|d| (d.sentence_id.as_str(), d.total)).collect();
    let w: Vec<(&str, f64)> = want.iter().map(|(id, s)| (id.as_str(), *s)).collect();
    assert_eq!(g, w, "{kind} disagrees on query {qid}");
}

/// All three retrievers against exhaustive scoring on `n_train` synthetic
/// sentences and `n_queries` queries.
pub fn retrievers_match_brute_force(n_train: usize, n_queries: usize, seed: u64) -> String {
    let started = Instant::now();
    let train = random_corpus(seed, n_train, "d", 300);
    let queries = random_corpus(seed + 1, n_queries, "q", 330);
    let counts = oracles::token_counts(&train, 2);
    let stats = Arc::new(TokenStats::build(&train, &StatsConfig::default()));
    let shared_train = Arc::new(train.clone());
    let (tokens, token_vecs) = table((0..330).map(|i| format!("w{i}")), 32);
    let tokens = Arc::new(tokens);
    let texts = train.iter().chain(&queries).map(AnnotatedSentence::text);
    let (sentences, sentence_vecs) = table(texts, 32);
    let sentences = Arc::new(sentences);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let sizes: Vec<usize> = (0..n_queries).map(|_| [1, 8, 8, 8, 50][rng.gen_range(0..5)]).collect();
    let mut compared = 0;

    let mut preset = RetrievalConfig::preset("conll03").unwrap();
    preset.weights.other = 0.2;
    for cfg in [RetrievalConfig::default(), preset] {
        let r = Retriever::LabelGuided(
            LabelGuidedRetriever::new(shared_train.clone(), stats.clone(), tokens.clone(), cfg.clone()).unwrap(),
        );
        let oracle = LabelGuidedOracle {
            train: &train,
            counts: counts.clone(),
            cfg,
            vectors: &token_vecs,
        };
        let tv = oracle.train_vectors();
        for (q, &n) in queries.iter().zip(&sizes) {
            let want = oracles::top_n(oracle.scores(&q.tokens, &tv), n);
            same_ranking("label-guided", &q.id, &r.retrieve(q, n).unwrap(), &want);
            compared += 1;
        }
    }

    let bm25 = Retriever::Bm25(Bm25Index::new(&train, Bm25Params::default()));
    for (q, &n) in queries.iter().zip(&sizes) {
        let want = oracles::top_n(oracles::bm25_scores(&train, &q.tokens, 1.5, 0.75), n);
        same_ranking("bm25", &q.id, &bm25.retrieve(q, n).unwrap(), &want);
        compared += 1;
    }

    let kate = Retriever::Kate(KateRetriever::new(&train, sentences).unwrap());
    for (q, &n) in queries.iter().zip(&sizes) {
        let vq = &sentence_vecs[&q.text()];
        let scored = train.iter().map(|s| (s.id.clone(), oracles::cos(vq, &sentence_vecs[&s.text()]))).collect();
        same_ranking("kate", &q.id, &kate.retrieve(q, n).unwrap(), &oracles::top_n(scored, n));
        compared += 1;
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    format!("{compared} rankings over {n_train} sentences identical, {elapsed:.2?}")
}

/// Strict scoring and error buckets against set and graph oracles.
pub fn evaluator_matches_oracles(instances: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reconciled = 0;
    for k in 0..instances {
        let n = rng.gen_range(0..=20);
        let inst: Vec<SentenceEval> = (0..n).map(|i| noisy_eval(&mut rng, format!("i{k}-{i:02}"), 5)).collect();
        let r = strict_f1(&inst);
        let (tp, fp, fn_) = oracles::strict_counts(&inst);
        assert_eq!((r.true_positives, r.false_positives, r.false_negatives), (tp, fp, fn_), "instance {k}");
        assert!((r.f1 - oracles::f1(tp, fp, fn_)).abs() <= 1e-12, "instance {k}");
        let b = classify_errors(&inst);
        assert_eq!(b, oracles::error_buckets(&inst), "instance {k}");
        if b.reconciles(&r) {
            reconciled += 1;
        }
    }
    assert_eq!(reconciled, instances);
    format!("{instances} instances agree; breakdown reconciles in {reconciled}/{instances}")
}

/// Order invariance under a fixed seed and shrinking margins as the corpus grows.
pub fn bootstrap_behaves() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let base = eval_set(5, 200);
    for seed in 0..5 {
        let mut shuffled = base.clone();
        shuffled.shuffle(&mut rng);
        assert_eq!(bootstrap_ci(&base, 500, 0.95, seed).unwrap(), bootstrap_ci(&shuffled, 500, 0.95, seed).unwrap());
    }
    let margins: Vec<f64> = [100, 400, 1600]
        .iter()
        .map(|&n| bootstrap_ci(&eval_set(7, n), 1000, 0.95, 3).unwrap().margin)
        .collect();
    assert!(margins.windows(2).all(|w| w[0] > w[1]), "margins {margins:?}");
    format!("order-invariant; margins {:.4} > {:.4} > {:.4} for 100/400/1600 sentences", margins[0], margins[1], margins[2])
}
