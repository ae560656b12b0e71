//! Brute-force reference implementations. Deliberately naive: every count is
//! a fresh scan, every ranking a full sort.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use labelstat::corpus::{AnnotatedSentence, Mention};
use labelstat::eval::{ErrorBreakdown, SentenceEval};
use labelstat::retriever::RetrievalConfig;

/// token -> (entity, context, other) by asking, for every occurrence, whether
/// it sits inside a mention or within `c` positions of one.
pub fn token_counts(train: &[AnnotatedSentence], c: usize) -> BTreeMap<String, (u64, u64, u64)> {
    let mut out: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    for s in train {
        for (i, t) in s.tokens.iter().enumerate() {
            let inside = s.mentions.iter().any(|m| m.start <= i && i <= m.end);
            let near = c > 0 && s.mentions.iter().any(|m| i + c >= m.start && i <= m.end + c);
            let e = out.entry(t.clone()).or_default();
            if inside {
                e.0 += 1;
            } else if near {
                e.1 += 1;
            } else {
                e.2 += 1;
            }
        }
    }
    out
}

/// (tp, fp, fn) from sets of (sentence, start, end, type).
pub fn strict_counts(sentences: &[SentenceEval]) -> (u64, u64, u64) {
    let flat = |pick: fn(&SentenceEval) -> &Vec<Mention>| -> HashSet<(String, usize, usize, String)> {
        sentences
            .iter()
            .flat_map(|s| pick(s).iter().map(move |m| (s.id.clone(), m.start, m.end, m.etype.clone())))
            .collect()
    };
    let gold = flat(|s| &s.gold);
    let pred = flat(|s| &s.pred);
    let tp = gold.intersection(&pred).count() as u64;
    (tp, pred.len() as u64 - tp, gold.len() as u64 - tp)
}

pub fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Error buckets by breadth-first search over the FP/FN overlap graph.
pub fn error_buckets(sentences: &[SentenceEval]) -> ErrorBreakdown {
    let mut out = ErrorBreakdown::default();
    for s in sentences {
        let same = |a: &Mention, b: &Mention| a.start == b.start && a.end == b.end && a.etype == b.etype;
        let mut fps: Vec<&Mention> = Vec::new();
        for p in &s.pred {
            if !s.gold.iter().any(|g| same(p, g)) && !fps.iter().any(|f| same(f, p)) {
                fps.push(p);
            }
        }
        let mut fns: Vec<&Mention> = Vec::new();
        for g in &s.gold {
            if !s.pred.iter().any(|p| same(p, g)) && !fns.iter().any(|f| same(f, g)) {
                fns.push(g);
            }
        }
        // Per span, as many type errors as there are FP/FN pairs at it.
        let mut spans: Vec<(usize, usize)> = fps.iter().map(|m| (m.start, m.end)).collect();
        spans.sort();
        spans.dedup();
        for sp in spans {
            let count = |list: &[&Mention]| list.iter().filter(|m| (m.start, m.end) == sp).count();
            let pairs = count(&fps).min(count(&fns));
            out.type_errors += pairs as u64;
            for list in [&mut fps, &mut fns] {
                for _ in 0..pairs {
                    let k = list.iter().position(|m| (m.start, m.end) == sp).unwrap();
                    list.remove(k);
                }
            }
        }
        let (fps2, fns2) = (fps, fns);

        // Nodes 0..p are FPs, p.. are FNs.
        let p = fps2.len();
        let node = |k: usize| if k < p { fps2[k] } else { fns2[k - p] };
        let total = p + fns2.len();
        let mut seen = vec![false; total];
        for root in 0..total {
            if seen[root] {
                continue;
            }
            let (mut nfp, mut nfn) = (0u64, 0u64);
            let mut queue = VecDeque::from([root]);
            seen[root] = true;
            while let Some(k) = queue.pop_front() {
                if k < p {
                    nfp += 1;
                } else {
                    nfn += 1;
                }
                for (j, visited) in seen.iter_mut().enumerate() {
                    let crosses = (k < p) != (j < p);
                    let (a, b) = (node(k), node(j));
                    if !*visited && crosses && a.start <= b.end && b.start <= a.end {
                        *visited = true;
                        queue.push_back(j);
                    }
                }
            }
            match (nfp, nfn) {
                (1, 0) => out.unique_fp += 1,
                (0, 1) => out.unique_fn += 1,
                (1, 1) => out.paired += 1,
                _ => {
                    out.multi_fp += nfp;
                    out.multi_fn += nfn;
                    if nfn == 1 {
                        out.multi_split += 1;
                    } else if nfp == 1 {
                        out.multi_merge += 1;
                    } else {
                        out.multi_tangled += 1;
                    }
                }
            }
        }
    }
    out
}

/// Exhaustive top-`n`: sort everything best first (score down, id up), keep
/// `n`, return worst first.
pub fn top_n(mut scored: Vec<(String, f64)>, n: usize) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(n);
    scored.reverse();
    scored
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Token importance from brute-force counts.
pub fn weight(t: &str, counts: &BTreeMap<String, (u64, u64, u64)>, cfg: &RetrievalConfig) -> f64 {
    match counts.get(t) {
        None => 1.0,
        Some(&(e, c, o)) => {
            let n = (e + c + o) as f64;
            let w = &cfg.weights;
            w.entity * (e as f64 / n) + w.context * (c as f64 / n) + w.other * (o as f64 / n)
        }
    }
}

pub struct LabelGuidedOracle<'a> {
    pub train: &'a [AnnotatedSentence],
    pub counts: BTreeMap<String, (u64, u64, u64)>,
    pub cfg: RetrievalConfig,
    pub vectors: &'a HashMap<String, Vec<f64>>,
}

impl LabelGuidedOracle<'_> {
    fn sentence_vector(&self, tokens: &[String]) -> Vec<f64> {
        let dim = self.vectors.values().next().map_or(0, Vec::len);
        let mut v = vec![0.0; dim];
        for t in tokens {
            let w = weight(t, &self.counts, &self.cfg);
            for (o, x) in v.iter_mut().zip(&self.vectors[t]) {
                *o += w * x;
            }
        }
        v
    }

    pub fn train_vectors(&self) -> Vec<Vec<f64>> {
        self.train.iter().map(|s| self.sentence_vector(&s.tokens)).collect()
    }

    /// Scores against every training sentence; `train_vectors` is the
    /// output of [`Self::train_vectors`].
    pub fn scores(&self, query: &[String], train_vectors: &[Vec<f64>]) -> Vec<(String, f64)> {
        let mut distinct: Vec<&String> = Vec::new();
        for t in query {
            if !distinct.contains(&t) {
                distinct.push(t);
            }
        }
        let vq = self.sentence_vector(query);
        self.train
            .iter()
            .zip(train_vectors)
            .map(|(s, vs)| {
                let mut tok = 0.0;
                for t in &distinct {
                    if s.tokens.contains(t) {
                        tok += weight(t, &self.counts, &self.cfg);
                    }
                }
                let emb = cos(&vq, vs);
                (s.id.clone(), self.cfg.lambda_token * tok + self.cfg.lambda_embed * emb)
            })
            .collect()
    }
}

/// BM25 with k1, b as given and idf = ln(1 + (N - df + 0.5) / (df + 0.5)).
pub fn bm25_scores(train: &[AnnotatedSentence], query: &[String], k1: f64, b: f64) -> Vec<(String, f64)> {
    let n = train.len() as f64;
    let avgdl = train.iter().map(|s| s.tokens.len()).sum::<usize>() as f64 / n;
    let df: HashMap<&String, f64> = query
        .iter()
        .map(|q| (q, train.iter().filter(|d| d.tokens.contains(q)).count() as f64))
        .collect();
    train
        .iter()
        .map(|s| {
            let mut score = 0.0;
            for q in query {
                let tf = s.tokens.iter().filter(|t| *t == q).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let idf = (1.0 + (n - df[q] + 0.5) / (df[q] + 0.5)).ln();
                score += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * (s.tokens.len() as f64 / avgdl)));
            }
            (s.id.clone(), score)
        })
        .collect()
}
