//! Seeded synthetic corpora and proptest strategies.

use labelstat::corpus::{AnnotatedSentence, EntityTypeSet, Mention};
use labelstat::eval::SentenceEval;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TYPES: [&str; 4] = ["PER", "LOC", "ORG", "MISC"];

/// Small vocabulary so that tokens repeat across categories.
pub const VOCAB: [&str; 12] = [
    "the", "of", "Paris", "city", "and", "said", "Ann", "Lee", ".", "in", "Bank", "'s",
];

pub fn schema() -> EntityTypeSet {
    EntityTypeSet::from_labels(&TYPES).unwrap()
}

/// Skewed token draw over `w0..w{vocab}`: low indices are frequent.
fn zipf_token(rng: &mut ChaCha8Rng, vocab: usize) -> String {
    let x: f64 = rng.gen();
    format!("w{}", (x * x * vocab as f64) as usize)
}

pub fn random_sentence(rng: &mut ChaCha8Rng, id: String, vocab: usize) -> AnnotatedSentence {
    let len = rng.gen_range(3..=20);
    let tokens: Vec<String> = (0..len).map(|_| zipf_token(rng, vocab)).collect();
    let mut mentions = Vec::new();
    let mut i = 0;
    while i < len {
        if rng.gen_bool(0.15) {
            let end = (i + rng.gen_range(0..3)).min(len - 1);
            mentions.push(Mention::new(&tokens, i, end, TYPES[rng.gen_range(0..TYPES.len())]));
            i = end + 1;
        } else {
            i += 1;
        }
    }
    AnnotatedSentence::new(id, tokens, mentions).unwrap()
}

/// `n` sentences with ids `{prefix}-{0000..}` so lexical and numeric order agree.
pub fn random_corpus(seed: u64, n: usize, prefix: &str, vocab: usize) -> Vec<AnnotatedSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| random_sentence(&mut rng, format!("{prefix}-{i:04}"), vocab)).collect()
}

/// Gold from a random sentence, predictions perturbed from it: kept, dropped,
/// retyped, widened, or joined by a spurious mention.
pub fn noisy_eval(rng: &mut ChaCha8Rng, id: String, max_mentions: usize) -> SentenceEval {
    let len = rng.gen_range(4..=16);
    let tokens: Vec<String> = (0..len).map(|k| format!("t{k}")).collect();
    let mut gold = Vec::new();
    let mut i = 0;
    while i < len && gold.len() < max_mentions {
        if rng.gen_bool(0.3) {
            let end = (i + rng.gen_range(0..3)).min(len - 1);
            gold.push(Mention::new(&tokens, i, end, TYPES[rng.gen_range(0..TYPES.len())]));
            i = end + 2;
        } else {
            i += 1;
        }
    }
    let mut pred: Vec<Mention> = Vec::new();
    for g in &gold {
        match rng.gen_range(0..10) {
            0..=5 => pred.push(g.clone()),
            6 => {}
            7 => pred.push(Mention::new(&tokens, g.start, g.end, TYPES[(TYPES.iter().position(|t| *t == g.etype).unwrap() + 1) % 4])),
            _ => pred.push(Mention::new(&tokens, g.start, (g.end + 1).min(len - 1), g.etype.clone())),
        }
    }
    if rng.gen_bool(0.3) {
        let s = rng.gen_range(0..len);
        let m = Mention::new(&tokens, s, s, TYPES[rng.gen_range(0..TYPES.len())]);
        if !pred.iter().any(|p| p.overlaps(&m)) {
            pred.push(m);
        }
    }
    pred.sort();
    // Widening can create overlaps; drop the later mention of any clash.
    let mut clean: Vec<Mention> = Vec::new();
    for p in pred {
        if clean.last().is_none_or(|l| l.end < p.start) {
            clean.push(p);
        }
    }
    SentenceEval { id, gold, pred: clean }
}

/// Arbitrary (possibly overlapping, possibly nested) mention sets over `len`
/// tokens, for evaluator properties.
pub fn arb_spans(len: usize, max: usize) -> impl Strategy<Value = Vec<Mention>> {
    prop::collection::vec((0..len, 0usize..3, 0..TYPES.len()), 0..=max).prop_map(move |raw| {
        let tokens: Vec<String> = (0..len).map(|k| format!("t{k}")).collect();
        let mut out: Vec<Mention> = raw
            .into_iter()
            .map(|(s, w, t)| Mention::new(&tokens, s, (s + w).min(len - 1), TYPES[t]))
            .collect();
        out.sort();
        out.dedup();
        out
    })
}

pub fn arb_eval_instance() -> impl Strategy<Value = Vec<SentenceEval>> {
    prop::collection::vec((4usize..12).prop_flat_map(|len| (arb_spans(len, 5), arb_spans(len, 5))), 0..=20).prop_map(
        |pairs| {
            pairs
                .into_iter()
                .enumerate()
                .map(|(i, (gold, pred))| SentenceEval {
                    id: format!("e{i:02}"),
                    gold,
                    pred,
                })
                .collect()
        },
    )
}

/// A sentence assembled from segments, each either plain tokens or one mention.
/// Adjacent mentions are allowed.
pub fn arb_sentence(id: String) -> impl Strategy<Value = AnnotatedSentence> {
    prop::collection::vec(
        (1usize..=3, any::<bool>(), 0..TYPES.len(), prop::collection::vec(0..VOCAB.len(), 3)),
        1..8,
    )
    .prop_map(move |segments| {
        let mut tokens = Vec::new();
        let mut spans = Vec::new();
        for (len, is_mention, t, words) in segments {
            let start = tokens.len();
            tokens.extend(words[..len].iter().map(|&w| VOCAB[w].to_string()));
            if is_mention {
                spans.push((start, tokens.len() - 1, TYPES[t]));
            }
        }
        let mentions = spans.iter().map(|&(s, e, t)| Mention::new(&tokens, s, e, t)).collect();
        AnnotatedSentence::new(id.clone(), tokens, mentions).unwrap()
    })
}

/// 1..12 sentences with ids `{prefix}-{i}`.
pub fn arb_corpus(prefix: &'static str) -> impl Strategy<Value = Vec<AnnotatedSentence>> {
    (1usize..12).prop_flat_map(move |n| (0..n).map(|i| arb_sentence(format!("{prefix}-{i}"))).collect::<Vec<_>>())
}
