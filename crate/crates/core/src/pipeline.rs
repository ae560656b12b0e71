//! Per-sentence orchestration: retrieve demonstrations, extract, reflect.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{AnnotatedSentence, Mention};
use crate::error::{Error, Result};
use crate::exec::{bounded_map, bounded_map_partial};
use crate::llm::{LlmClient, Phase, UsageSnapshot};
use crate::prompt::{align_mentions, build_icl_prompt, parse_entity_output, AlignPolicy, ParseOptions, TaskDescription};
use crate::reflect::{PredictionState, Provenance, ReflectionConfig, Reflector};
use crate::retriever::{Retriever, RetrieverKind, ScoredDemo};
use crate::stats::{SpanIndex, TokenStats};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Extraction only.
    #[serde(rename = "icl")]
    Icl,
    /// Extraction followed by the reflection passes.
    #[default]
    #[serde(rename = "icl+reflect")]
    IclReflect,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "icl" => Ok(Variant::Icl),
            "icl+reflect" => Ok(Variant::IclReflect),
            _ => Err(Error::Config(format!("unknown variant {s:?} (expected icl or icl+reflect)"))),
        }
    }
}

/// Everything recorded for one query sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: String,
    /// Demonstrations in prompt order (most similar last).
    pub demos: Vec<ScoredDemo>,
    pub icl_request_hash: String,
    /// Set when the extraction reply had no usable entity list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub icl_parse_failure: Option<String>,
    /// Extracted names that matched no token span.
    pub unaligned_names: usize,
    pub state: PredictionState,
}

impl SentenceRecord {
    pub fn mentions(&self) -> Vec<Mention> {
        self.state.mentions()
    }
}

pub struct Pipeline {
    pub train: Arc<Vec<AnnotatedSentence>>,
    pub stats: Arc<TokenStats>,
    pub index: Arc<SpanIndex>,
    pub retriever: Retriever,
    pub desc: TaskDescription,
    pub client: LlmClient,
    pub reflection: ReflectionConfig,
    pub variant: Variant,
    pub n_demos: usize,
    pub concurrency: usize,
    pub strict_types: bool,
    pub align: AlignPolicy,
    by_id: HashMap<String, usize>,
}

impl Pipeline {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        train: Arc<Vec<AnnotatedSentence>>,
        stats: Arc<TokenStats>,
        index: Arc<SpanIndex>,
        retriever: Retriever,
        desc: TaskDescription,
        client: LlmClient,
        reflection: ReflectionConfig,
        variant: Variant,
        n_demos: usize,
    ) -> Self {
        let by_id = train.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
        Pipeline {
            align: reflection.align,
            train,
            stats,
            index,
            retriever,
            desc,
            client,
            reflection,
            variant,
            n_demos,
            concurrency: 4,
            strict_types: false,
            by_id,
        }
    }

    pub fn with_concurrency(mut self, limit: usize) -> Self {
        self.concurrency = limit.max(1);
        self
    }

    pub fn run_sentence(&self, query: &AnnotatedSentence) -> Result<SentenceRecord> {
        let demos = self.retriever.retrieve(query, self.n_demos)?;
        let demo_sentences: Vec<&AnnotatedSentence> = demos
            .iter()
            .map(|d| &self.train[self.by_id[&d.sentence_id]])
            .collect();
        let prompt = build_icl_prompt(&self.desc, &demo_sentences, query);
        let reply = self.client.ask(&prompt, Phase::Icl)?;

        let mut state = PredictionState::new(query);
        let opts = ParseOptions {
            schema: &self.desc.types,
            strict_types: self.strict_types,
        };
        let (icl_parse_failure, unaligned_names) = match parse_entity_output(&reply.text, &opts) {
            Ok(parsed) => {
                let aligned = align_mentions(&parsed.entities, &state.query(), self.align);
                for m in aligned.mentions {
                    state.insert(m, Provenance::Icl);
                }
                (None, aligned.dropped)
            }
            Err(f) => {
                log::warn!("{}: extraction reply unusable: {}", query.id, f.reason);
                (Some(f.reason), 0)
            }
        };

        if self.variant == Variant::IclReflect {
            let reflector = Reflector {
                stats: &self.stats,
                index: &self.index,
                desc: &self.desc,
                client: &self.client,
                cfg: &self.reflection,
                strict_types: self.strict_types,
            };
            state = reflector.run(state)?;
        }
        Ok(SentenceRecord {
            id: query.id.clone(),
            demos,
            icl_request_hash: reply.request_hash,
            icl_parse_failure,
            unaligned_names,
            state,
        })
    }

    /// Runs every query, at most `concurrency` at a time; records come back
    /// in query order.
    pub fn run_all(&self, queries: &[AnnotatedSentence]) -> Result<Vec<SentenceRecord>> {
        bounded_map(queries, self.concurrency, |_, q| self.run_sentence(q))
    }

    /// As [`Pipeline::run_all`], but on failure also returns the records
    /// finished before the first failing query.
    pub fn run_all_partial(&self, queries: &[AnnotatedSentence]) -> (Vec<SentenceRecord>, Option<Error>) {
        bounded_map_partial(queries, self.concurrency, |_, q| self.run_sentence(q))
    }
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// The persisted result of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config_hash: String,
    pub corpus_hashes: BTreeMap<String, String>,
    pub model_id: String,
    pub variant: Variant,
    pub retriever: RetrieverKind,
    /// Every query selected for the run, in run order.
    pub query_ids: Vec<String>,
    /// One record per finished query; a prefix of `query_ids` when incomplete.
    pub records: Vec<SentenceRecord>,
    pub usage: UsageSnapshot,
}

pub const MANIFEST_FORMAT: &str = "labelstat-run-v1";

impl RunManifest {
    pub fn predictions(&self) -> BTreeMap<String, Vec<Mention>> {
        self.records.iter().map(|r| (r.id.clone(), r.mentions())).collect()
    }

    pub fn states(&self) -> impl Iterator<Item = &PredictionState> {
        self.records.iter().map(|r| &r.state)
    }

    /// Retrieved demonstration ids per query.
    pub fn retrieved(&self) -> BTreeMap<String, Vec<String>> {
        self.records
            .iter()
            .map(|r| (r.id.clone(), r.demos.iter().map(|d| d.sentence_id.clone()).collect()))
            .collect()
    }

    /// Digest of the manifest content, for comparing runs.
    pub fn content_hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("manifest serializes"))
    }
}
