//! Label-grounded token statistics.
//!
//! Every training-token occurrence falls into exactly one category: inside a
//! mention (entity), within `C` tokens of a mention edge (context), or neither
//! (other). Per-token counts over those categories drive retrieval weights and
//! reflection triggers; the span index keeps the windowed snippets that serve
//! as span-level demonstrations.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, Mention};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    /// Context tokens per side of a mention. Zero disables the context category.
    pub context_window: usize,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig { context_window: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenCategory {
    Entity,
    Context,
    Other,
}

/// Assigns each token index a category with priority entity > context > other.
pub fn categorize_tokens(sentence: &AnnotatedSentence, cfg: &StatsConfig) -> Vec<TokenCategory> {
    let n = sentence.tokens.len();
    let mut cats = vec![TokenCategory::Other; n];
    let c = cfg.context_window;
    if c > 0 {
        for m in &sentence.mentions {
            let lo = m.start.saturating_sub(c);
            let hi = (m.end + c).min(n.saturating_sub(1));
            for cat in &mut cats[lo..=hi] {
                *cat = TokenCategory::Context;
            }
        }
    }
    for m in &sentence.mentions {
        for cat in &mut cats[m.start..=m.end] {
            *cat = TokenCategory::Entity;
        }
    }
    cats
}

/// Occurrence counts of one token across the three categories.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCategoryCounts {
    pub entity: u64,
    pub context: u64,
    pub other: u64,
}

impl TokenCategoryCounts {
    pub fn total(&self) -> u64 {
        self.entity + self.context + self.other
    }

    pub fn non_entity(&self) -> u64 {
        self.context + self.other
    }

    fn ratio(&self, count: u64) -> f64 {
        match self.total() {
            0 => 0.0,
            t => count as f64 / t as f64,
        }
    }

    pub fn p_entity(&self) -> f64 {
        self.ratio(self.entity)
    }

    pub fn p_context(&self) -> f64 {
        self.ratio(self.context)
    }

    pub fn p_other(&self) -> f64 {
        self.ratio(self.other)
    }

    fn bump(&mut self, cat: TokenCategory) {
        match cat {
            TokenCategory::Entity => self.entity += 1,
            TokenCategory::Context => self.context += 1,
            TokenCategory::Other => self.other += 1,
        }
    }

    /// The `token_stat` JSON block shown to the model during reflection.
    pub fn token_stat_block(&self) -> String {
        format!(
            "{{\"num_occurrences_as_entity\": {e}, \"num_occurrences_as_context_tokens\": {c}, \
             \"num_occurrences_as_other_tokens\": {o}, \"entity_vs_context_count\": \"{e} vs {c}\", \
             \"entity_vs_non_entity_count\": \"{e} vs {n}\"}}",
            e = self.entity,
            c = self.context,
            o = self.other,
            n = self.non_entity()
        )
    }
}

/// Per-token category counts over a training split. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenStats {
    config: StatsConfig,
    counts: HashMap<String, TokenCategoryCounts>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    format: String,
    version: u32,
    context_window: usize,
    vocabulary: usize,
}

#[derive(Serialize, Deserialize)]
struct SnapshotRecord {
    token: String,
    entity: u64,
    context: u64,
    other: u64,
}

const SNAPSHOT_FORMAT: &str = "labelstat-token-stats";

impl TokenStats {
    pub fn build(train: &[AnnotatedSentence], cfg: &StatsConfig) -> Self {
        let mut counts: HashMap<String, TokenCategoryCounts> = HashMap::new();
        for s in train {
            for (tok, cat) in s.tokens.iter().zip(categorize_tokens(s, cfg)) {
                counts.entry(tok.clone()).or_default().bump(cat);
            }
        }
        TokenStats {
            config: *cfg,
            counts,
        }
    }

    pub fn config(&self) -> &StatsConfig {
        &self.config
    }

    pub fn get(&self, token: &str) -> Option<&TokenCategoryCounts> {
        self.counts.get(token)
    }

    /// Counts for `token`, all zero when unseen.
    pub fn counts_or_zero(&self, token: &str) -> TokenCategoryCounts {
        self.counts.get(token).copied().unwrap_or_default()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.counts.contains_key(token)
    }

    pub fn vocabulary_len(&self) -> usize {
        self.counts.len()
    }

    pub fn total_occurrences(&self) -> u64 {
        self.counts.values().map(|c| c.total()).sum()
    }

    /// Tokens in byte order with their counts.
    pub fn sorted(&self) -> Vec<(&str, &TokenCategoryCounts)> {
        let mut v: Vec<_> = self.counts.iter().map(|(k, c)| (k.as_str(), c)).collect();
        v.sort_unstable_by(|a, b| a.0.cmp(b.0));
        v
    }

    /// Top `k` tokens by entity probability, then entity count, then token.
    pub fn top_entity_tokens(&self, k: usize) -> Vec<(&str, &TokenCategoryCounts)> {
        let mut v = self.sorted();
        v.sort_by(|a, b| {
            b.1.p_entity()
                .total_cmp(&a.1.p_entity())
                .then(b.1.entity.cmp(&a.1.entity))
                .then(a.0.cmp(b.0))
        });
        v.truncate(k);
        v
    }

    /// Record-per-line snapshot: a header line, then one JSON record per token
    /// in byte order. Identical statistics always produce identical bytes.
    pub fn to_snapshot(&self) -> String {
        let mut out = String::new();
        let header = SnapshotHeader {
            format: SNAPSHOT_FORMAT.into(),
            version: 1,
            context_window: self.config.context_window,
            vocabulary: self.counts.len(),
        };
        out.push_str(&serde_json::to_string(&header).expect("header serializes"));
        out.push('\n');
        for (token, c) in self.sorted() {
            let rec = SnapshotRecord {
                token: token.to_string(),
                entity: c.entity,
                context: c.context,
                other: c.other,
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: SnapshotHeader = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| Error::Data("empty stats snapshot".into()))?,
        )?;
        if header.format != SNAPSHOT_FORMAT {
            return Err(Error::Data(format!("not a stats snapshot: {:?}", header.format)));
        }
        let mut counts = HashMap::with_capacity(header.vocabulary);
        for line in lines {
            let rec: SnapshotRecord = serde_json::from_str(line)?;
            if rec.entity + rec.context + rec.other == 0 {
                return Err(Error::Data(format!("token {:?} has zero occurrences", rec.token)));
            }
            counts.insert(
                rec.token,
                TokenCategoryCounts {
                    entity: rec.entity,
                    context: rec.context,
                    other: rec.other,
                },
            );
        }
        if counts.len() != header.vocabulary {
            return Err(Error::Data(format!(
                "stats snapshot declares {} tokens but holds {}",
                header.vocabulary,
                counts.len()
            )));
        }
        Ok(TokenStats {
            config: StatsConfig {
                context_window: header.context_window,
            },
            counts,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanKind {
    Entity,
    Context,
    Other,
}

/// A windowed snippet of a training sentence used as a span-level demonstration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub kind: SpanKind,
    /// The token the span is anchored on; the mention surface for entity spans.
    pub anchor_token: String,
    pub sentence_id: String,
    pub window_start: usize,
    pub window_end: usize,
    pub rendered: String,
    /// The mention shown as the expected output (absent for other spans).
    pub label: Option<Mention>,
}

impl SpanRecord {
    /// A free-standing record, for building prompt payloads by hand.
    pub fn example(kind: SpanKind, rendered: &str, label: Option<(&str, &str)>) -> Self {
        SpanRecord {
            kind,
            anchor_token: String::new(),
            sentence_id: String::new(),
            window_start: 0,
            window_end: 0,
            rendered: rendered.to_string(),
            label: label.map(|(name, etype)| Mention {
                start: 0,
                end: 0,
                etype: etype.to_string(),
                surface: name.to_string(),
            }),
        }
    }
}

/// Window of a mention extended by up to `c` tokens per side, stopping early
/// at any token that belongs to another mention.
pub fn entity_window(sentence: &AnnotatedSentence, mention: &Mention, c: usize) -> (usize, usize) {
    let mut lo = mention.start;
    for _ in 0..c {
        if lo == 0 || sentence.mention_at(lo - 1).is_some() {
            break;
        }
        lo -= 1;
    }
    let mut hi = mention.end;
    for _ in 0..c {
        if hi + 1 >= sentence.tokens.len() || sentence.mention_at(hi + 1).is_some() {
            break;
        }
        hi += 1;
    }
    (lo, hi)
}

fn render(sentence: &AnnotatedSentence, lo: usize, hi: usize) -> String {
    sentence.tokens[lo..=hi].join(" ")
}

/// One entity span per mention.
pub fn extract_entity_spans(sentence: &AnnotatedSentence, cfg: &StatsConfig) -> Vec<SpanRecord> {
    sentence
        .mentions
        .iter()
        .map(|m| {
            let (lo, hi) = entity_window(sentence, m, cfg.context_window);
            SpanRecord {
                kind: SpanKind::Entity,
                anchor_token: m.surface.clone(),
                sentence_id: sentence.id.clone(),
                window_start: lo,
                window_end: hi,
                rendered: render(sentence, lo, hi),
                label: Some(m.clone()),
            }
        })
        .collect()
}

/// Half-width of other-span windows.
pub fn other_half_width(cfg: &StatsConfig) -> usize {
    match cfg.context_window {
        0 => 2,
        c => c.min(2),
    }
}

/// Context spans (one per context-token occurrence and adjacent mention, equal
/// to that mention's entity span) followed by other spans.
pub fn extract_context_and_other_spans(
    sentence: &AnnotatedSentence,
    cfg: &StatsConfig,
) -> Vec<SpanRecord> {
    let cats = categorize_tokens(sentence, cfg);
    let windows: Vec<(usize, usize)> = sentence
        .mentions
        .iter()
        .map(|m| entity_window(sentence, m, cfg.context_window))
        .collect();
    let half = other_half_width(cfg);
    let n = sentence.tokens.len();
    let mut out = Vec::new();
    for (i, cat) in cats.iter().enumerate() {
        match cat {
            TokenCategory::Entity => {}
            TokenCategory::Context => {
                for (m, &(lo, hi)) in sentence.mentions.iter().zip(&windows) {
                    if lo <= i && i <= hi {
                        out.push(SpanRecord {
                            kind: SpanKind::Context,
                            anchor_token: sentence.tokens[i].clone(),
                            sentence_id: sentence.id.clone(),
                            window_start: lo,
                            window_end: hi,
                            rendered: render(sentence, lo, hi),
                            label: Some(m.clone()),
                        });
                    }
                }
            }
            TokenCategory::Other => {
                let lo = i.saturating_sub(half);
                let hi = (i + half).min(n - 1);
                out.push(SpanRecord {
                    kind: SpanKind::Other,
                    anchor_token: sentence.tokens[i].clone(),
                    sentence_id: sentence.id.clone(),
                    window_start: lo,
                    window_end: hi,
                    rendered: render(sentence, lo, hi),
                    label: None,
                });
            }
        }
    }
    out
}

/// Keys locating entity spans by the tokens in their context windows.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ContextKey {
    /// Token occurs in the left context of the mention.
    Left(String),
    /// Token occurs in the right context of the mention.
    Right(String),
    /// Left-context token paired with a right-context token of the same mention.
    Pair(String, String),
}

/// Span demonstrations indexed by anchor token, plus entity spans indexed by
/// their context tokens. Immutable once built.
#[derive(Debug, Default, Clone)]
pub struct SpanIndex {
    entity: HashMap<String, Vec<Arc<SpanRecord>>>,
    context: HashMap<String, Vec<Arc<SpanRecord>>>,
    other: HashMap<String, Vec<Arc<SpanRecord>>>,
    by_context: HashMap<ContextKey, Vec<Arc<SpanRecord>>>,
}

impl SpanIndex {
    pub fn build(train: &[AnnotatedSentence], cfg: &StatsConfig) -> Self {
        let mut index = SpanIndex::default();
        for s in train {
            for rec in extract_entity_spans(s, cfg) {
                let rec = Arc::new(rec);
                let m = rec.label.as_ref().expect("entity spans carry a label");
                let mention_tokens: HashSet<&String> = s.tokens[m.start..=m.end].iter().collect();
                for tok in mention_tokens {
                    index.entity.entry(tok.clone()).or_default().push(rec.clone());
                }

                let left: Vec<&String> = dedup(&s.tokens[rec.window_start..m.start]);
                let right: Vec<&String> = dedup(&s.tokens[m.end + 1..=rec.window_end]);
                for l in &left {
                    index
                        .by_context
                        .entry(ContextKey::Left((*l).clone()))
                        .or_default()
                        .push(rec.clone());
                }
                for r in &right {
                    index
                        .by_context
                        .entry(ContextKey::Right((*r).clone()))
                        .or_default()
                        .push(rec.clone());
                }
                for l in &left {
                    for r in &right {
                        index
                            .by_context
                            .entry(ContextKey::Pair((*l).clone(), (*r).clone()))
                            .or_default()
                            .push(rec.clone());
                    }
                }
            }
            for rec in extract_context_and_other_spans(s, cfg) {
                let map = match rec.kind {
                    SpanKind::Context => &mut index.context,
                    SpanKind::Other => &mut index.other,
                    SpanKind::Entity => unreachable!("entity spans extracted separately"),
                };
                map.entry(rec.anchor_token.clone()).or_default().push(Arc::new(rec));
            }
        }
        index
    }

    /// Spans of `kind` anchored on `token`; entity spans are reachable from
    /// every token of their mention.
    pub fn spans(&self, kind: SpanKind, token: &str) -> &[Arc<SpanRecord>] {
        let map = match kind {
            SpanKind::Entity => &self.entity,
            SpanKind::Context => &self.context,
            SpanKind::Other => &self.other,
        };
        map.get(token).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn by_context(&self, key: &ContextKey) -> &[Arc<SpanRecord>] {
        self.by_context.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Distinct records per kind, in deterministic order, for snapshots.
    pub fn records(&self) -> Vec<&SpanRecord> {
        let mut seen = HashSet::new();
        let mut out: Vec<&SpanRecord> = Vec::new();
        for map in [&self.entity, &self.context, &self.other] {
            for recs in map.values() {
                for r in recs {
                    if seen.insert(Arc::as_ptr(r)) {
                        out.push(r);
                    }
                }
            }
        }
        out.sort_by(|a, b| {
            (a.kind, &a.sentence_id, a.window_start, &a.anchor_token, a.window_end)
                .cmp(&(b.kind, &b.sentence_id, b.window_start, &b.anchor_token, b.window_end))
        });
        out
    }

    /// Record-per-line snapshot of every span.
    pub fn to_snapshot(&self) -> String {
        let mut out = String::new();
        for r in self.records() {
            let _ = writeln!(out, "{}", serde_json::to_string(r).expect("span serializes"));
        }
        out
    }

    /// Number of records per kind.
    pub fn counts(&self) -> BTreeMap<SpanKind, usize> {
        let mut out = BTreeMap::new();
        for r in self.records() {
            *out.entry(r.kind).or_insert(0) += 1;
        }
        out
    }
}

fn dedup(tokens: &[String]) -> Vec<&String> {
    let mut seen = HashSet::new();
    tokens.iter().filter(|t| seen.insert(t.as_str())).collect()
}
