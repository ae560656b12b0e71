//! Targeted reflection passes over extracted entities.
//!
//! Three passes run in a fixed order for each sentence: unseen tokens with
//! entity-like neighbours, tokens that are almost always entities in training
//! but were missed, and then the edges of every predicted mention whose
//! placement contradicts the training statistics. Each pass that finds
//! candidates issues one prompt and applies the parsed update.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, Mention};
use crate::error::{Error, Result};
use crate::llm::{LlmClient, Phase};
use crate::prompt::{
    align_mentions, build_reflection_prompt, parse_reflection_output, AlignPolicy, BoundaryPayload,
    BoundaryStatus, BoundaryTokenPayload, ContextEvidence, FnCandidate, ParseOptions, ReflectionKind,
    ReflectionPayload, ReflectionUpdate, TaskDescription, UnseenCandidate,
};
use crate::retriever::{retrieve_span_demos, Side, SpanDemoQuery};
use crate::stats::{SpanIndex, SpanKind, TokenStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stages {
    pub unseen: bool,
    pub false_negative: bool,
    pub boundary: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Stages::all()
    }
}

impl Stages {
    pub fn all() -> Self {
        Stages {
            unseen: true,
            false_negative: true,
            boundary: true,
        }
    }

    pub fn none() -> Self {
        Stages {
            unseen: false,
            false_negative: false,
            boundary: false,
        }
    }

    pub fn any(&self) -> bool {
        self.unseen || self.false_negative || self.boundary
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReflectionConfig {
    /// Entity probability above which a missed token is reconsidered.
    pub theta_fn: f64,
    /// Span demonstrations per category in each prompt.
    pub m_demos: usize,
    /// Tokens inspected on each side of a mention edge.
    pub k_boundary: usize,
    /// Minimum entity-plus-context probability for a neighbour of an unseen token.
    pub tau_ctx: f64,
    /// Extra evidence needed before a boundary token counts as misplaced.
    pub boundary_margin: u64,
    pub stages: Stages,
    pub align: AlignPolicy,
}

impl Default for ReflectionConfig {
    fn default() -> Self {
        ReflectionConfig {
            theta_fn: 0.95,
            m_demos: 1,
            k_boundary: 2,
            tau_ctx: 0.5,
            boundary_margin: 0,
            stages: Stages::all(),
            align: AlignPolicy::All,
        }
    }
}

impl ReflectionConfig {
    pub fn preset(dataset: &str) -> Option<Self> {
        let mut cfg = ReflectionConfig::default();
        match dataset.to_ascii_lowercase().as_str() {
            "ncbi" | "ncbi-disease" | "conll03" | "conll2003" | "tweetner7" => {}
            "bc2gm" => cfg.theta_fn = 0.9,
            "ontonotes" => cfg.m_demos = 4,
            _ => return None,
        }
        Some(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("theta_fn", self.theta_fn), ("tau_ctx", self.tau_ctx)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.m_demos == 0 || self.k_boundary == 0 {
            return Err(Error::Config("m_demos and k_boundary must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Icl,
    Unseen,
    FalseNegative,
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedMention {
    #[serde(flatten)]
    pub mention: Mention,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "outcome")]
pub enum Outcome {
    Added { mentions: Vec<Mention> },
    NoChange,
    Replaced { from: Mention, to: Mention },
    Removed { mention: Mention },
    /// The reply parsed but could not be applied.
    Rejected { reason: String },
    ParseFailed { reason: String },
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Added { .. } => "added",
            Outcome::NoChange => "no-change",
            Outcome::Replaced { .. } => "replaced",
            Outcome::Removed { .. } => "removed",
            Outcome::Rejected { .. } => "rejected",
            Outcome::ParseFailed { .. } => "parse-failed",
        }
    }
}

/// A query token selected for reflection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: usize,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub stage: ReflectionKind,
    pub candidates: Vec<Candidate>,
    /// The inspected mention (boundary stage only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target: Option<Mention>,
    pub request_hash: String,
    #[serde(flatten)]
    pub outcome: Outcome,
}

/// Predictions for one query sentence and the record of how they changed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionState {
    pub sentence_id: String,
    pub tokens: Vec<String>,
    pub mentions: Vec<PredictedMention>,
    pub log: Vec<LogEntry>,
}

impl PredictionState {
    pub fn new(query: &AnnotatedSentence) -> Self {
        PredictionState {
            sentence_id: query.id.clone(),
            tokens: query.tokens.clone(),
            mentions: Vec::new(),
            log: Vec::new(),
        }
    }

    pub fn query(&self) -> AnnotatedSentence {
        AnnotatedSentence {
            id: self.sentence_id.clone(),
            tokens: self.tokens.clone(),
            mentions: Vec::new(),
        }
    }

    pub fn mentions(&self) -> Vec<Mention> {
        self.mentions.iter().map(|p| p.mention.clone()).collect()
    }

    pub fn covers(&self, index: usize) -> bool {
        self.mentions.iter().any(|p| p.mention.contains(index))
    }

    /// Adds `m` unless it overlaps an existing mention; existing mentions win.
    pub fn insert(&mut self, m: Mention, provenance: Provenance) -> bool {
        if m.end >= self.tokens.len() || m.start > m.end {
            return false;
        }
        if self.mentions.iter().any(|p| p.mention.overlaps(&m)) {
            return false;
        }
        let pos = self.mentions.partition_point(|p| p.mention.start < m.start);
        self.mentions.insert(pos, PredictedMention { mention: m, provenance });
        self.check();
        true
    }

    fn position(&self, m: &Mention) -> Option<usize> {
        self.mentions.iter().position(|p| p.mention == *m)
    }

    fn check(&self) {
        for w in self.mentions.windows(2) {
            assert!(w[0].mention.end < w[1].mention.start, "prediction invariant violated");
        }
        for p in &self.mentions {
            let m = &p.mention;
            assert!(m.start <= m.end && m.end < self.tokens.len(), "mention out of bounds");
            assert_eq!(m.surface, self.tokens[m.start..=m.end].join(" "), "surface mismatch");
        }
    }
}

/// Neighbour evidence around an unseen token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnseenSelection {
    pub candidate: Candidate,
    /// Qualifying neighbours: index, token, and which side of the candidate
    /// they sit on (a neighbour left of the candidate is left context).
    pub neighbours: Vec<(usize, String, Side)>,
}

/// Unseen tokens outside all predictions with at least one entity-like or
/// context-like neighbour, first occurrence of each token, sentence order.
pub fn select_unseen_candidates(
    state: &PredictionState,
    stats: &TokenStats,
    cfg: &ReflectionConfig,
) -> Vec<UnseenSelection> {
    let c = stats.config().context_window;
    let n = state.tokens.len();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, tok) in state.tokens.iter().enumerate() {
        if stats.contains(tok) || state.covers(i) || seen.contains(tok.as_str()) {
            continue;
        }
        let mut neighbours = Vec::new();
        let mut dedup = HashSet::new();
        for j in i.saturating_sub(c)..=(i + c).min(n - 1) {
            if j == i {
                continue;
            }
            let t = &state.tokens[j];
            let Some(counts) = stats.get(t) else { continue };
            if counts.p_entity() + counts.p_context() >= cfg.tau_ctx {
                let side = if j < i { Side::Left } else { Side::Right };
                if dedup.insert((t.as_str(), side)) {
                    neighbours.push((j, t.clone(), side));
                }
            }
        }
        if !neighbours.is_empty() {
            seen.insert(tok.as_str());
            out.push(UnseenSelection {
                candidate: Candidate {
                    index: i,
                    token: tok.clone(),
                },
                neighbours,
            });
        }
    }
    out
}

/// Tokens outside all predictions whose entity probability exceeds the
/// threshold, first occurrence of each token, sentence order.
pub fn select_fn_candidates(state: &PredictionState, stats: &TokenStats, cfg: &ReflectionConfig) -> Vec<Candidate> {
    let mut seen = HashSet::new();
    state
        .tokens
        .iter()
        .enumerate()
        .filter(|(i, t)| {
            !state.covers(*i) && stats.get(t).is_some_and(|c| c.p_entity() > cfg.theta_fn) && seen.insert(t.as_str())
        })
        .map(|(i, t)| Candidate {
            index: i,
            token: t.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryToken {
    pub index: usize,
    pub token: String,
    pub status: BoundaryStatus,
    pub flagged: bool,
}

/// Tokens at and around the edges of `mention`, in sentence order.
///
/// Up to `k` tokens inward from each edge are inside tokens; up to `k`
/// tokens outward on each side are outside tokens, stopping at other
/// predicted mentions. An inside token is flagged when it is unseen or more
/// often a non-entity; an outside token when it is more often an entity.
pub fn select_boundary_tokens(
    mention: &Mention,
    state: &PredictionState,
    stats: &TokenStats,
    cfg: &ReflectionConfig,
) -> Vec<BoundaryToken> {
    let k = cfg.k_boundary;
    let n = state.tokens.len();
    let other = |i: usize| state.mentions.iter().any(|p| p.mention != *mention && p.mention.contains(i));
    let mut idx: Vec<(usize, BoundaryStatus)> = Vec::new();

    let mut left: Vec<usize> = Vec::new();
    let mut i = mention.start;
    while left.len() < k && i > 0 && !other(i - 1) {
        i -= 1;
        left.push(i);
    }
    idx.extend(left.into_iter().rev().map(|i| (i, BoundaryStatus::Outside)));

    let inner: std::collections::BTreeSet<usize> = (mention.start..=mention.end)
        .filter(|&i| i < mention.start + k || i + k > mention.end)
        .collect();
    idx.extend(inner.into_iter().map(|i| (i, BoundaryStatus::Inside)));

    let mut i = mention.end;
    let mut right = 0;
    while right < k && i + 1 < n && !other(i + 1) {
        i += 1;
        right += 1;
        idx.push((i, BoundaryStatus::Outside));
    }

    idx.into_iter()
        .map(|(i, status)| {
            let tok = &state.tokens[i];
            let flagged = match (stats.get(tok), status) {
                (None, BoundaryStatus::Inside) => true,
                (None, BoundaryStatus::Outside) => false,
                (Some(c), BoundaryStatus::Inside) => c.non_entity() > c.entity + cfg.boundary_margin,
                (Some(c), BoundaryStatus::Outside) => c.entity > c.non_entity() + cfg.boundary_margin,
            };
            BoundaryToken {
                index: i,
                token: tok.clone(),
                status,
                flagged,
            }
        })
        .collect()
}

/// Everything a reflection pass reads. All of it is shared read-only.
pub struct Reflector<'a> {
    pub stats: &'a TokenStats,
    pub index: &'a SpanIndex,
    pub desc: &'a TaskDescription,
    pub client: &'a LlmClient,
    pub cfg: &'a ReflectionConfig,
    pub strict_types: bool,
}

impl Reflector<'_> {
    fn parse_opts(&self) -> ParseOptions<'_> {
        ParseOptions {
            schema: &self.desc.types,
            strict_types: self.strict_types,
        }
    }

    /// Runs the enabled passes in order. Transport errors propagate; replies
    /// that cannot be parsed leave the predictions untouched.
    pub fn run(&self, mut state: PredictionState) -> Result<PredictionState> {
        let stages = self.cfg.stages;
        if stages.unseen {
            self.unseen_stage(&mut state)?;
        }
        if stages.false_negative {
            self.fn_stage(&mut state)?;
        }
        if stages.boundary {
            self.boundary_stage(&mut state)?;
        }
        Ok(state)
    }

    fn unseen_stage(&self, state: &mut PredictionState) -> Result<()> {
        let sel = select_unseen_candidates(state, self.stats, self.cfg);
        if sel.is_empty() {
            return Ok(());
        }
        let payload: Vec<UnseenCandidate> = sel
            .iter()
            .map(|s| UnseenCandidate {
                token: s.candidate.token.clone(),
                contexts: s
                    .neighbours
                    .iter()
                    .map(|(_, tok, side)| {
                        let opposite = s
                            .neighbours
                            .iter()
                            .filter(|(_, _, o)| o != side)
                            .map(|(_, t, _)| t.clone())
                            .collect();
                        let q = SpanDemoQuery::ContextMatch {
                            token: tok.clone(),
                            side: *side,
                            opposite,
                            m: self.cfg.m_demos,
                        };
                        ContextEvidence {
                            token: tok.clone(),
                            examples: retrieve_span_demos(&q, self.index).positives,
                        }
                    })
                    .collect(),
            })
            .collect();
        let candidates = sel.into_iter().map(|s| s.candidate).collect();
        self.addition_stage(state, ReflectionPayload::Unseen(payload), candidates, Phase::ReflectUnseen, Provenance::Unseen)
    }

    fn fn_stage(&self, state: &mut PredictionState) -> Result<()> {
        let cands = select_fn_candidates(state, self.stats, self.cfg);
        if cands.is_empty() {
            return Ok(());
        }
        let payload = cands
            .iter()
            .map(|c| FnCandidate {
                token: c.token.clone(),
                counts: self.stats.counts_or_zero(&c.token),
                demos: retrieve_span_demos(
                    &SpanDemoQuery::TokenContainment {
                        token: c.token.clone(),
                        m: self.cfg.m_demos,
                    },
                    self.index,
                ),
            })
            .collect();
        self.addition_stage(
            state,
            ReflectionPayload::FalseNegative(payload),
            cands,
            Phase::ReflectFn,
            Provenance::FalseNegative,
        )
    }

    fn addition_stage(
        &self,
        state: &mut PredictionState,
        payload: ReflectionPayload,
        candidates: Vec<Candidate>,
        phase: Phase,
        provenance: Provenance,
    ) -> Result<()> {
        let kind = payload.kind();
        let query = state.query();
        let prompt = build_reflection_prompt(self.desc, &query, &payload);
        let reply = self.client.ask(&prompt, phase)?;
        let outcome = match parse_reflection_output(kind, &reply.text, &self.parse_opts()) {
            Err(f) => {
                log::warn!("{}: {} reply unusable: {}", state.sentence_id, kind.as_str(), f.reason);
                Outcome::ParseFailed { reason: f.reason }
            }
            Ok(ReflectionUpdate::Entities { entities }) => {
                let aligned = align_mentions(&entities, &query, self.cfg.align);
                let added: Vec<Mention> = aligned
                    .mentions
                    .into_iter()
                    .filter(|m| state.insert(m.clone(), provenance))
                    .collect();
                if added.is_empty() {
                    Outcome::NoChange
                } else {
                    Outcome::Added { mentions: added }
                }
            }
            Ok(other) => Outcome::Rejected {
                reason: format!("unexpected update {other:?}"),
            },
        };
        state.log.push(LogEntry {
            stage: kind,
            candidates,
            target: None,
            request_hash: reply.request_hash,
            outcome,
        });
        Ok(())
    }

    fn boundary_stage(&self, state: &mut PredictionState) -> Result<()> {
        let targets = state.mentions();
        for target in targets {
            if state.position(&target).is_none() {
                continue;
            }
            let flagged: Vec<BoundaryToken> = select_boundary_tokens(&target, state, self.stats, self.cfg)
                .into_iter()
                .filter(|b| b.flagged)
                .collect();
            if flagged.is_empty() {
                continue;
            }
            let payload = BoundaryPayload {
                name: target.surface.clone(),
                etype: target.etype.clone(),
                tokens: flagged
                    .iter()
                    .map(|b| BoundaryTokenPayload {
                        token: b.token.clone(),
                        status: b.status,
                        counts: self.stats.counts_or_zero(&b.token),
                        demos: retrieve_span_demos(
                            &SpanDemoQuery::CategorySample {
                                token: b.token.clone(),
                                kinds: vec![SpanKind::Entity, SpanKind::Context, SpanKind::Other],
                                m: self.cfg.m_demos,
                            },
                            self.index,
                        ),
                    })
                    .collect(),
            };
            let query = state.query();
            let prompt = build_reflection_prompt(self.desc, &query, &ReflectionPayload::Boundary(payload));
            let reply = self.client.ask(&prompt, Phase::ReflectBoundary)?;
            let outcome = match parse_reflection_output(ReflectionKind::Boundary, &reply.text, &self.parse_opts()) {
                Err(f) => {
                    log::warn!("{}: boundary reply unusable: {}", state.sentence_id, f.reason);
                    Outcome::ParseFailed { reason: f.reason }
                }
                Ok(ReflectionUpdate::Remove) => {
                    let pos = state.position(&target).expect("target present");
                    state.mentions.remove(pos);
                    Outcome::Removed { mention: target.clone() }
                }
                Ok(ReflectionUpdate::Replace { entity }) => self.apply_replacement(state, &target, &query, &entity),
                Ok(other) => Outcome::Rejected {
                    reason: format!("unexpected update {other:?}"),
                },
            };
            state.log.push(LogEntry {
                stage: ReflectionKind::Boundary,
                candidates: flagged
                    .into_iter()
                    .map(|b| Candidate {
                        index: b.index,
                        token: b.token,
                    })
                    .collect(),
                target: Some(target),
                request_hash: reply.request_hash,
                outcome,
            });
        }
        Ok(())
    }

    fn apply_replacement(
        &self,
        state: &mut PredictionState,
        target: &Mention,
        query: &AnnotatedSentence,
        entity: &crate::prompt::ParsedEntity,
    ) -> Outcome {
        let aligned = align_mentions(std::slice::from_ref(entity), query, AlignPolicy::All);
        let best = aligned
            .mentions
            .into_iter()
            .filter(|m| m.overlaps(target))
            .max_by(|a, b| a.overlap_len(target).cmp(&b.overlap_len(target)).then(b.start.cmp(&a.start)));
        let Some(new) = best else {
            return Outcome::Rejected {
                reason: format!("{:?} does not overlap the inspected mention", entity.name),
            };
        };
        if new == *target {
            return Outcome::NoChange;
        }
        let pos = state.position(target).expect("target present");
        let removed = state.mentions.remove(pos);
        if state.insert(new.clone(), Provenance::Boundary) {
            Outcome::Replaced {
                from: target.clone(),
                to: new,
            }
        } else {
            state.mentions.insert(pos, removed);
            Outcome::Rejected {
                reason: format!("{:?} would overlap another mention", entity.name),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub prompts: u64,
    pub added: u64,
    pub no_change: u64,
    pub replaced: u64,
    pub removed: u64,
    pub rejected: u64,
    pub parse_failed: u64,
}

impl StageCounts {
    fn bump(&mut self, o: &Outcome) {
        self.prompts += 1;
        match o {
            Outcome::Added { .. } => self.added += 1,
            Outcome::NoChange => self.no_change += 1,
            Outcome::Replaced { .. } => self.replaced += 1,
            Outcome::Removed { .. } => self.removed += 1,
            Outcome::Rejected { .. } => self.rejected += 1,
            Outcome::ParseFailed { .. } => self.parse_failed += 1,
        }
    }

    fn outcomes(&self) -> u64 {
        self.added + self.no_change + self.replaced + self.removed + self.rejected + self.parse_failed
    }
}

/// Prompt and outcome counts per reflection stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionReport {
    pub stages: BTreeMap<ReflectionKind, StageCounts>,
    /// Sentences that triggered at least one reflection prompt.
    pub sentences_reflected: u64,
}

impl ReflectionReport {
    pub fn stage(&self, kind: ReflectionKind) -> StageCounts {
        self.stages.get(&kind).copied().unwrap_or_default()
    }

    pub fn total_prompts(&self) -> u64 {
        self.stages.values().map(|c| c.prompts).sum()
    }

    /// Every prompt has exactly one outcome.
    pub fn reconciles(&self) -> bool {
        self.stages.values().all(|c| c.prompts == c.outcomes())
    }

    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:<16} {:>8} {:>6} {:>10} {:>9} {:>8} {:>9} {:>8}\n",
            "stage", "prompts", "added", "no-change", "replaced", "removed", "rejected", "unparsed"
        );
        for kind in ReflectionKind::ALL {
            let c = self.stage(kind);
            out.push_str(&format!(
                "{:<16} {:>8} {:>6} {:>10} {:>9} {:>8} {:>9} {:>8}\n",
                kind.as_str(),
                c.prompts,
                c.added,
                c.no_change,
                c.replaced,
                c.removed,
                c.rejected,
                c.parse_failed
            ));
        }
        out
    }
}

pub fn reflection_report<'a>(states: impl IntoIterator<Item = &'a PredictionState>) -> ReflectionReport {
    let mut report = ReflectionReport::default();
    for kind in ReflectionKind::ALL {
        report.stages.insert(kind, StageCounts::default());
    }
    for s in states {
        if !s.log.is_empty() {
            report.sentences_reflected += 1;
        }
        for e in &s.log {
            report.stages.entry(e.stage).or_default().bump(&e.outcome);
        }
    }
    report
}
