//! Strict mention-level scoring and error analysis.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, Mention};
use crate::error::{Error, Result};

/// Gold and predicted mentions for one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceEval {
    pub id: String,
    pub gold: Vec<Mention>,
    pub pred: Vec<Mention>,
}

/// Pairs gold sentences with predictions. The two id sets must coincide.
pub fn pair_up(gold: &[AnnotatedSentence], pred: &BTreeMap<String, Vec<Mention>>) -> Result<Vec<SentenceEval>> {
    let gold_ids: HashSet<&str> = gold.iter().map(|s| s.id.as_str()).collect();
    if let Some(extra) = pred.keys().find(|k| !gold_ids.contains(k.as_str())) {
        return Err(Error::Data(format!("prediction for unknown sentence {extra:?}")));
    }
    gold.iter()
        .map(|s| {
            let p = pred
                .get(&s.id)
                .ok_or_else(|| Error::Data(format!("no prediction for sentence {:?}", s.id)))?;
            Ok(SentenceEval {
                id: s.id.clone(),
                gold: s.mentions.clone(),
                pred: p.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EvalResult {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        EvalResult {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f1,
        }
    }
}

type Key = (usize, usize, String);

fn key(m: &Mention) -> Key {
    (m.start, m.end, m.etype.clone())
}

/// (tp, fp, fn) for one sentence under exact span-and-type matching.
pub fn sentence_counts(s: &SentenceEval) -> (u64, u64, u64) {
    let gold: HashSet<Key> = s.gold.iter().map(key).collect();
    let pred: HashSet<Key> = s.pred.iter().map(key).collect();
    let tp = gold.intersection(&pred).count() as u64;
    (tp, pred.len() as u64 - tp, gold.len() as u64 - tp)
}

/// Micro-averaged strict precision, recall and F1.
pub fn strict_f1(sentences: &[SentenceEval]) -> EvalResult {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for s in sentences {
        let (a, b, c) = sentence_counts(s);
        tp += a;
        fp += b;
        fn_ += c;
    }
    EvalResult::from_counts(tp, fp, fn_)
}

/// Every false positive and false negative lands in exactly one bucket.
///
/// Exact-span pairs that differ only in type are type errors. The remaining
/// errors are grouped into connected components of the span-overlap graph
/// between false positives and false negatives: an isolated error is unique,
/// a one-to-one overlap is a paired error, anything larger is multi-span and
/// all of its errors are counted there.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    /// FP/FN pairs with identical spans and different types (one of each per pair).
    pub type_errors: u64,
    /// FP/FN pairs that overlap only each other (one of each per pair).
    pub paired: u64,
    pub unique_fp: u64,
    pub unique_fn: u64,
    /// False positives inside multi-span components.
    pub multi_fp: u64,
    /// False negatives inside multi-span components.
    pub multi_fn: u64,
    /// Components with one false negative split over several predictions.
    pub multi_split: u64,
    /// Components with one prediction merging several gold mentions.
    pub multi_merge: u64,
    /// Components with several of each.
    pub multi_tangled: u64,
}

impl ErrorBreakdown {
    pub fn fp_total(&self) -> u64 {
        self.type_errors + self.paired + self.unique_fp + self.multi_fp
    }

    pub fn fn_total(&self) -> u64 {
        self.type_errors + self.paired + self.unique_fn + self.multi_fn
    }

    pub fn reconciles(&self, r: &EvalResult) -> bool {
        self.fp_total() == r.false_positives && self.fn_total() == r.false_negatives
    }

    fn add(&mut self, o: &ErrorBreakdown) {
        self.type_errors += o.type_errors;
        self.paired += o.paired;
        self.unique_fp += o.unique_fp;
        self.unique_fn += o.unique_fn;
        self.multi_fp += o.multi_fp;
        self.multi_fn += o.multi_fn;
        self.multi_split += o.multi_split;
        self.multi_merge += o.multi_merge;
        self.multi_tangled += o.multi_tangled;
    }
}

pub fn classify_sentence_errors(s: &SentenceEval) -> ErrorBreakdown {
    let gold: HashSet<Key> = s.gold.iter().map(key).collect();
    let pred: HashSet<Key> = s.pred.iter().map(key).collect();
    let mut seen = HashSet::new();
    let fps: Vec<&Mention> = s.pred.iter().filter(|m| !gold.contains(&key(m)) && seen.insert(key(m))).collect();
    let mut fns: Vec<&Mention> = s.gold.iter().filter(|m| !pred.contains(&key(m)) && seen.insert(key(m))).collect();
    let mut out = ErrorBreakdown::default();

    // Same span, different type: pair one FP with one FN.
    let fps: Vec<&Mention> = fps
        .into_iter()
        .filter(|fp| match fns.iter().position(|f| f.span() == fp.span()) {
            Some(j) => {
                fns.remove(j);
                out.type_errors += 1;
                false
            }
            None => true,
        })
        .collect();

    // Union-find over FPs (0..p) and FNs (p..p+q).
    let p = fps.len();
    let mut parent: Vec<usize> = (0..p + fns.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, a) in fps.iter().enumerate() {
        for (j, b) in fns.iter().enumerate() {
            if a.overlaps(b) {
                let (ra, rb) = (find(&mut parent, i), find(&mut parent, p + j));
                parent[ra] = rb;
            }
        }
    }
    let mut comps: HashMap<usize, (u64, u64)> = HashMap::new();
    for x in 0..parent.len() {
        let r = find(&mut parent, x);
        let e = comps.entry(r).or_default();
        if x < p {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    for (nfp, nfn) in comps.into_values() {
        match (nfp, nfn) {
            (1, 0) => out.unique_fp += 1,
            (0, 1) => out.unique_fn += 1,
            (1, 1) => out.paired += 1,
            (a, b) => {
                out.multi_fp += a;
                out.multi_fn += b;
                match (a, b) {
                    (_, 1) => out.multi_split += 1,
                    (1, _) => out.multi_merge += 1,
                    _ => out.multi_tangled += 1,
                }
            }
        }
    }
    out
}

pub fn classify_errors(sentences: &[SentenceEval]) -> ErrorBreakdown {
    let mut total = ErrorBreakdown::default();
    for s in sentences {
        total.add(&classify_sentence_errors(s));
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Novelty {
    /// The (surface, type) pair occurs in training.
    Seen,
    /// New pair, every token seen in training.
    UnseenSeenTokens,
    /// New pair with at least one token absent from training.
    UnseenNovelTokens,
}

impl Novelty {
    pub const ALL: [Novelty; 3] = [Novelty::Seen, Novelty::UnseenSeenTokens, Novelty::UnseenNovelTokens];

    pub fn as_str(self) -> &'static str {
        match self {
            Novelty::Seen => "seen",
            Novelty::UnseenSeenTokens => "unseen-seen-tokens",
            Novelty::UnseenNovelTokens => "unseen-novel-tokens",
        }
    }
}

/// Training-side lookups for novelty bucketing.
pub struct TrainingIndex {
    pairs: HashSet<(String, String)>,
    vocabulary: HashSet<String>,
}

impl TrainingIndex {
    pub fn new(train: &[AnnotatedSentence]) -> Self {
        TrainingIndex {
            pairs: train
                .iter()
                .flat_map(|s| s.mentions.iter().map(|m| (m.surface.clone(), m.etype.clone())))
                .collect(),
            vocabulary: train.iter().flat_map(|s| s.tokens.iter().cloned()).collect(),
        }
    }

    pub fn contains_pair(&self, surface: &str, etype: &str) -> bool {
        self.pairs.contains(&(surface.to_string(), etype.to_string()))
    }

    pub fn novelty(&self, m: &Mention) -> Novelty {
        if self.contains_pair(&m.surface, &m.etype) {
            Novelty::Seen
        } else if m.surface.split(' ').all(|t| self.vocabulary.contains(t)) {
            Novelty::UnseenSeenTokens
        } else {
            Novelty::UnseenNovelTokens
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeenUnseenBreakdown {
    pub buckets: BTreeMap<Novelty, EvalResult>,
    /// Gold mentions per bucket.
    pub gold_counts: BTreeMap<Novelty, u64>,
    /// False positives that overlap no gold mention.
    pub residual_fp: u64,
}

/// Splits scores by whether gold mentions occur in training. A false positive
/// is charged to the bucket of the gold mention it overlaps most (leftmost on
/// ties); false positives overlapping nothing go to the residual count.
pub fn seen_unseen_breakdown(sentences: &[SentenceEval], train: &TrainingIndex) -> SeenUnseenBreakdown {
    let mut counts: BTreeMap<Novelty, (u64, u64, u64)> = Novelty::ALL.iter().map(|n| (*n, (0, 0, 0))).collect();
    let mut residual = 0;
    for s in sentences {
        let pred: HashSet<Key> = s.pred.iter().map(key).collect();
        let gold: HashSet<Key> = s.gold.iter().map(key).collect();
        for g in &s.gold {
            let c = counts.get_mut(&train.novelty(g)).expect("bucket");
            if pred.contains(&key(g)) {
                c.0 += 1;
            } else {
                c.2 += 1;
            }
        }
        for p in s.pred.iter().filter(|p| !gold.contains(&key(p))) {
            let best = s
                .gold
                .iter()
                .filter(|g| g.overlaps(p))
                .max_by(|a, b| a.overlap_len(p).cmp(&b.overlap_len(p)).then(b.start.cmp(&a.start)));
            match best {
                Some(g) => counts.get_mut(&train.novelty(g)).expect("bucket").1 += 1,
                None => residual += 1,
            }
        }
    }
    SeenUnseenBreakdown {
        gold_counts: counts.iter().map(|(k, c)| (*k, c.0 + c.2)).collect(),
        buckets: counts
            .into_iter()
            .map(|(k, (tp, fp, fn_))| (k, EvalResult::from_counts(tp, fp, fn_)))
            .collect(),
        residual_fp: residual,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrieverSanity {
    /// Gold test mentions whose (surface, type) occurs in training.
    pub eligible: u64,
    /// Of those, mentions found in at least one retrieved demonstration.
    pub covered: u64,
    /// `covered / eligible`, absent when nothing is eligible.
    pub proportion: Option<f64>,
}

/// How often the retrieved demonstrations contain the query's seen entities.
///
/// `retrieved` maps each query id to the ids of its demonstrations.
pub fn retriever_sanity(
    queries: &[AnnotatedSentence],
    retrieved: &BTreeMap<String, Vec<String>>,
    train: &[AnnotatedSentence],
) -> RetrieverSanity {
    let by_id: HashMap<&str, &AnnotatedSentence> = train.iter().map(|s| (s.id.as_str(), s)).collect();
    let index = TrainingIndex::new(train);
    let (mut eligible, mut covered) = (0, 0);
    for q in queries {
        let demos: Vec<&AnnotatedSentence> = retrieved
            .get(&q.id)
            .map(|ids| ids.iter().filter_map(|id| by_id.get(id.as_str()).copied()).collect())
            .unwrap_or_default();
        for m in &q.mentions {
            if !index.contains_pair(&m.surface, &m.etype) {
                continue;
            }
            eligible += 1;
            if demos
                .iter()
                .any(|d| d.mentions.iter().any(|g| g.surface == m.surface && g.etype == m.etype))
            {
                covered += 1;
            }
        }
    }
    RetrieverSanity {
        eligible,
        covered,
        proportion: (eligible > 0).then(|| covered as f64 / eligible as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub f1: f64,
    pub lower: f64,
    pub upper: f64,
    pub margin: f64,
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval of micro F1 over sentence resamples.
/// Sentences are ordered by id first, so input order does not matter.
pub fn bootstrap_ci(sentences: &[SentenceEval], resamples: usize, level: f64, seed: u64) -> Result<BootstrapCi> {
    if sentences.len() < 2 {
        return Err(Error::Data("bootstrap needs at least two sentences".into()));
    }
    if resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::Config("bootstrap needs resamples > 0 and 0 < level < 1".into()));
    }
    let mut ordered: Vec<&SentenceEval> = sentences.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let counts: Vec<(u64, u64, u64)> = ordered.iter().map(|s| sentence_counts(s)).collect();
    let n = counts.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for _ in 0..n {
            let (a, b, c) = counts[rng.gen_range(0..n)];
            tp += a;
            fp += b;
            fn_ += c;
        }
        scores.push(EvalResult::from_counts(tp, fp, fn_).f1);
    }
    scores.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let lower = quantile(&scores, alpha);
    let upper = quantile(&scores, 1.0 - alpha);
    Ok(BootstrapCi {
        f1: strict_f1(sentences).f1,
        lower,
        upper,
        margin: (upper - lower) / 2.0,
        resamples,
        level,
        seed,
    })
}
