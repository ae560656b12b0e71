//! Demonstration retrieval.
//!
//! The label-guided retriever mixes a weighted token-overlap score with the
//! cosine of weighted token-embedding sums. BM25 and whole-sentence
//! embedding nearest neighbours are provided as baselines. All three use an
//! exact scan with deterministic tie-breaking by sentence id.

mod span;

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::AnnotatedSentence;
use crate::error::{Error, Result};
use crate::llm::{cosine_with_norms, norm, VectorTable};
use crate::stats::TokenStats;

pub use span::{retrieve_span_demos, Side, SpanDemoQuery, SpanDemos};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenWeights {
    pub entity: f64,
    pub context: f64,
    pub other: f64,
}

impl Default for TokenWeights {
    fn default() -> Self {
        TokenWeights {
            entity: 1.0,
            context: 1.0,
            other: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenMatchMode {
    /// Each distinct query token counts once.
    #[default]
    Distinct,
    /// Every query token occurrence counts.
    Occurrences,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Weight of the token-match component.
    pub lambda_token: f64,
    /// Weight of the embedding-cosine component.
    pub lambda_embed: f64,
    pub weights: TokenWeights,
    /// Demonstrations per prompt.
    pub n_demos: usize,
    pub match_mode: TokenMatchMode,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            lambda_token: 1.0,
            lambda_embed: 1.0,
            weights: TokenWeights::default(),
            n_demos: 8,
            match_mode: TokenMatchMode::Distinct,
        }
    }
}

impl RetrievalConfig {
    /// Tuned settings for the known benchmark corpora; `None` for other names.
    pub fn preset(dataset: &str) -> Option<Self> {
        let mut cfg = RetrievalConfig::default();
        match dataset.to_ascii_lowercase().as_str() {
            "ncbi" | "ncbi-disease" | "ontonotes" | "tweetner7" => {}
            "bc2gm" => {
                cfg.lambda_embed = 0.01;
                cfg.weights.context = 0.5;
            }
            "conll03" | "conll2003" => cfg.lambda_token = 0.01,
            _ => return None,
        }
        Some(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let all = [self.lambda_token, self.lambda_embed, w.entity, w.context, w.other];
        if all.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config("retrieval weights must be finite and non-negative".into()));
        }
        if self.n_demos == 0 {
            return Err(Error::Config("n_demos must be at least 1".into()));
        }
        Ok(())
    }
}

/// Importance of a token: its category probabilities mixed by the weights,
/// or 1 for tokens never seen in training.
pub fn token_weight(token: &str, stats: &TokenStats, w: &TokenWeights) -> f64 {
    match stats.get(token) {
        Some(c) => w.entity * c.p_entity() + w.context * c.p_context() + w.other * c.p_other(),
        None => 1.0,
    }
}

/// Query tokens that contribute to the match score, in first-occurrence order.
fn match_terms(query: &[String], mode: TokenMatchMode) -> Vec<&str> {
    match mode {
        TokenMatchMode::Occurrences => query.iter().map(String::as_str).collect(),
        TokenMatchMode::Distinct => {
            let mut seen = HashSet::new();
            query.iter().map(String::as_str).filter(|t| seen.insert(*t)).collect()
        }
    }
}

/// Sum of weights of query tokens that also occur in the candidate.
pub fn token_match_score(query: &[String], candidate: &[String], stats: &TokenStats, cfg: &RetrievalConfig) -> f64 {
    let cand: HashSet<&str> = candidate.iter().map(String::as_str).collect();
    let mut score = 0.0;
    for t in match_terms(query, cfg.match_mode) {
        if cand.contains(t) {
            score += token_weight(t, stats, &cfg.weights);
        }
    }
    score
}

/// Weighted sum of token vectors over every token occurrence.
pub fn weighted_sentence_embedding(
    tokens: &[String],
    stats: &TokenStats,
    cfg: &RetrievalConfig,
    vectors: &VectorTable,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; vectors.dim()];
    for t in tokens {
        let v = vectors.get(t)?;
        let w = token_weight(t, stats, &cfg.weights);
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    Ok(out)
}

/// A ranked training sentence with its score decomposition.
///
/// For the label-guided retriever `total = lambda_token * token_component +
/// lambda_embed * embed_component`. BM25 reports its score as the token
/// component and KATE its cosine as the embedding component; in both cases
/// `total` equals that single component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDemo {
    pub sentence_id: String,
    pub total: f64,
    pub token_component: f64,
    pub embed_component: f64,
}

pub fn combined_score(
    query: &AnnotatedSentence,
    candidate: &AnnotatedSentence,
    stats: &TokenStats,
    cfg: &RetrievalConfig,
    vectors: &VectorTable,
) -> Result<ScoredDemo> {
    let token_component = token_match_score(&query.tokens, &candidate.tokens, stats, cfg);
    let vq = weighted_sentence_embedding(&query.tokens, stats, cfg, vectors)?;
    let vc = weighted_sentence_embedding(&candidate.tokens, stats, cfg, vectors)?;
    let embed_component = cosine_with_norms(&vq, norm(&vq), &vc, norm(&vc));
    Ok(ScoredDemo {
        sentence_id: candidate.id.clone(),
        total: cfg.lambda_token * token_component + cfg.lambda_embed * embed_component,
        token_component,
        embed_component,
    })
}

/// Best first: higher total, then smaller sentence id.
pub fn rank_order(a: &ScoredDemo, b: &ScoredDemo) -> Ordering {
    b.total.total_cmp(&a.total).then_with(|| a.sentence_id.cmp(&b.sentence_id))
}

/// Keeps the best `n` and returns them worst-first, so the most similar
/// demonstration ends up next to the query in the prompt.
pub fn top_n_ascending(mut scored: Vec<ScoredDemo>, n: usize) -> Vec<ScoredDemo> {
    if scored.len() < n {
        log::warn!("only {} candidate demonstrations for {} slots", scored.len(), n);
    }
    scored.par_sort_unstable_by(rank_order);
    scored.truncate(n);
    scored.reverse();
    scored
}

/// Token → (sentence index, term frequency), each sentence listed once per token.
fn postings(train: &[AnnotatedSentence]) -> HashMap<String, Vec<(u32, u32)>> {
    let mut map: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
    for (i, s) in train.iter().enumerate() {
        let mut tf: HashMap<&str, u32> = HashMap::new();
        for t in &s.tokens {
            *tf.entry(t).or_insert(0) += 1;
        }
        let mut entries: Vec<_> = tf.into_iter().collect();
        entries.sort_unstable();
        for (t, f) in entries {
            map.entry(t.to_string()).or_default().push((i as u32, f));
        }
    }
    map
}

/// Label-guided retriever over a fixed training split.
pub struct LabelGuidedRetriever {
    train: Arc<Vec<AnnotatedSentence>>,
    stats: Arc<TokenStats>,
    vectors: Arc<VectorTable>,
    cfg: RetrievalConfig,
    postings: HashMap<String, Vec<(u32, u32)>>,
    sentence_vectors: Vec<Vec<f64>>,
    sentence_norms: Vec<f64>,
}

impl LabelGuidedRetriever {
    /// `vectors` must hold a vector for every training token and every token
    /// of the queries that will be issued.
    pub fn new(
        train: Arc<Vec<AnnotatedSentence>>,
        stats: Arc<TokenStats>,
        vectors: Arc<VectorTable>,
        cfg: RetrievalConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let sentence_vectors = train
            .par_iter()
            .map(|s| weighted_sentence_embedding(&s.tokens, &stats, &cfg, &vectors))
            .collect::<Result<Vec<_>>>()?;
        let sentence_norms = sentence_vectors.iter().map(|v| norm(v)).collect();
        Ok(LabelGuidedRetriever {
            postings: postings(&train),
            train,
            stats,
            vectors,
            cfg,
            sentence_vectors,
            sentence_norms,
        })
    }

    pub fn config(&self) -> &RetrievalConfig {
        &self.cfg
    }

    /// Scores of every training sentence, in training order.
    pub fn score_all(&self, query: &[String]) -> Result<Vec<ScoredDemo>> {
        let mut token_scores = vec![0.0; self.train.len()];
        for t in match_terms(query, self.cfg.match_mode) {
            if let Some(list) = self.postings.get(t) {
                let w = token_weight(t, &self.stats, &self.cfg.weights);
                for &(i, _) in list {
                    token_scores[i as usize] += w;
                }
            }
        }
        let vq = weighted_sentence_embedding(query, &self.stats, &self.cfg, &self.vectors)?;
        let nq = norm(&vq);
        let (l1, l2) = (self.cfg.lambda_token, self.cfg.lambda_embed);
        Ok(self
            .train
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let emb = cosine_with_norms(&vq, nq, &self.sentence_vectors[i], self.sentence_norms[i]);
                ScoredDemo {
                    sentence_id: s.id.clone(),
                    total: l1 * token_scores[i] + l2 * emb,
                    token_component: token_scores[i],
                    embed_component: emb,
                }
            })
            .collect())
    }

    pub fn retrieve(&self, query: &[String], n: usize) -> Result<Vec<ScoredDemo>> {
        Ok(top_n_ascending(self.score_all(query)?, n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.5, b: 0.75 }
    }
}

/// Okapi BM25 term weight. `idf` uses the non-negative `ln(1 + ...)` form.
pub fn bm25_term(df: usize, n_docs: usize, tf: u32, doc_len: usize, avgdl: f64, p: &Bm25Params) -> f64 {
    let idf = (1.0 + (n_docs as f64 - df as f64 + 0.5) / (df as f64 + 0.5)).ln();
    let tf = tf as f64;
    let norm_len = if avgdl > 0.0 { doc_len as f64 / avgdl } else { 0.0 };
    idf * (tf * (p.k1 + 1.0)) / (tf + p.k1 * (1.0 - p.b + p.b * norm_len))
}

/// BM25 ranking baseline. Query terms are summed per occurrence.
pub struct Bm25Index {
    ids: Vec<String>,
    doc_lens: Vec<usize>,
    avgdl: f64,
    postings: HashMap<String, Vec<(u32, u32)>>,
    params: Bm25Params,
}

impl Bm25Index {
    pub fn new(train: &[AnnotatedSentence], params: Bm25Params) -> Self {
        let doc_lens: Vec<usize> = train.iter().map(|s| s.tokens.len()).collect();
        let avgdl = if train.is_empty() {
            0.0
        } else {
            doc_lens.iter().sum::<usize>() as f64 / train.len() as f64
        };
        Bm25Index {
            ids: train.iter().map(|s| s.id.clone()).collect(),
            doc_lens,
            avgdl,
            postings: postings(train),
            params,
        }
    }

    pub fn score_all(&self, query: &[String]) -> Vec<ScoredDemo> {
        let n = self.ids.len();
        let mut scores = vec![0.0; n];
        for t in query {
            if let Some(list) = self.postings.get(t) {
                for &(i, tf) in list {
                    let i = i as usize;
                    scores[i] += bm25_term(list.len(), n, tf, self.doc_lens[i], self.avgdl, &self.params);
                }
            }
        }
        self.ids
            .iter()
            .zip(scores)
            .map(|(id, s)| ScoredDemo {
                sentence_id: id.clone(),
                total: s,
                token_component: s,
                embed_component: 0.0,
            })
            .collect()
    }

    pub fn retrieve(&self, query: &[String], n: usize) -> Vec<ScoredDemo> {
        top_n_ascending(self.score_all(query), n)
    }
}

/// Nearest neighbours under whole-sentence embeddings, keyed by sentence text.
pub struct KateRetriever {
    ids: Vec<String>,
    vectors: Vec<Arc<[f64]>>,
    norms: Vec<f64>,
    table: Arc<VectorTable>,
}

impl KateRetriever {
    /// `sentence_vectors` must hold the space-joined text of every training
    /// sentence and every query.
    pub fn new(train: &[AnnotatedSentence], sentence_vectors: Arc<VectorTable>) -> Result<Self> {
        let vectors = train
            .iter()
            .map(|s| sentence_vectors.get(&s.text()).map(Arc::from))
            .collect::<Result<Vec<Arc<[f64]>>>>()?;
        Ok(KateRetriever {
            ids: train.iter().map(|s| s.id.clone()).collect(),
            norms: vectors.iter().map(|v| norm(v)).collect(),
            vectors,
            table: sentence_vectors,
        })
    }

    pub fn score_all(&self, query_text: &str) -> Result<Vec<ScoredDemo>> {
        let q = self.table.get(query_text)?;
        let nq = norm(q);
        Ok(self
            .ids
            .par_iter()
            .enumerate()
            .map(|(i, id)| {
                let c = cosine_with_norms(q, nq, &self.vectors[i], self.norms[i]);
                ScoredDemo {
                    sentence_id: id.clone(),
                    total: c,
                    token_component: 0.0,
                    embed_component: c,
                }
            })
            .collect())
    }

    pub fn retrieve(&self, query_text: &str, n: usize) -> Result<Vec<ScoredDemo>> {
        Ok(top_n_ascending(self.score_all(query_text)?, n))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrieverKind {
    #[default]
    LabelGuided,
    Kate,
    Bm25,
}

/// Any of the three sentence-level retrievers behind one interface.
pub enum Retriever {
    LabelGuided(LabelGuidedRetriever),
    Kate(KateRetriever),
    Bm25(Bm25Index),
}

impl Retriever {
    pub fn kind(&self) -> RetrieverKind {
        match self {
            Retriever::LabelGuided(_) => RetrieverKind::LabelGuided,
            Retriever::Kate(_) => RetrieverKind::Kate,
            Retriever::Bm25(_) => RetrieverKind::Bm25,
        }
    }

    pub fn retrieve(&self, query: &AnnotatedSentence, n: usize) -> Result<Vec<ScoredDemo>> {
        match self {
            Retriever::LabelGuided(r) => r.retrieve(&query.tokens, n),
            Retriever::Kate(r) => r.retrieve(&query.text(), n),
            Retriever::Bm25(r) => Ok(r.retrieve(&query.tokens, n)),
        }
    }
}
