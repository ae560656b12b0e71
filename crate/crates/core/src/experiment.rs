//! Builds every pipeline component from a [`RunConfig`] and runs it end to end.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{BackendMode, CorpusFormat, EmbeddingProviderKind, RunConfig};
use crate::corpus::{load_conll, load_jsonl, to_jsonl, AnnotatedSentence, ConllOptions, Dataset};
use crate::error::{Error, Result};
use crate::llm::{
    usage_report, CachedEmbedder, ChatBackend, EmbeddingCache, EmbeddingProvider, HashedEmbedder, HttpChatBackend,
    HttpEmbedder, HttpSettings, LlmClient, RecordingBackend, ReplayBackend, ScriptedBackend, UsageLedger,
    VectorTable,
};
use crate::pipeline::{sha256_hex, Pipeline, RunManifest, MANIFEST_FORMAT};
use crate::reflect::LogEntry;
use crate::retriever::{Bm25Index, KateRetriever, LabelGuidedRetriever, Retriever, RetrieverKind};
use crate::stats::{SpanIndex, TokenStats};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REFLECTION_LOG_FILE: &str = "reflection_log.jsonl";
pub const USAGE_FILE: &str = "usage.json";

/// Reads one split file in the configured format; ids of column-format files
/// are prefixed with `split`. Also returns the digest of the file bytes.
pub fn load_split(cfg: &RunConfig, path: &Path, split: &str) -> Result<(Vec<AnnotatedSentence>, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let types = cfg.dataset.entity_types()?;
    let sentences = match cfg.dataset.format {
        CorpusFormat::Conll => {
            let opts = ConllOptions {
                repair: cfg.dataset.bio_repair,
                id_prefix: Some(split.to_string()),
            };
            load_conll(path, &types, &opts)?
        }
        CorpusFormat::Jsonl => load_jsonl(path, &types)?,
    };
    Ok((sentences, sha256_hex(&bytes)))
}

/// Loads only the training split, for commands that need nothing else.
pub fn load_train(cfg: &RunConfig) -> Result<(Vec<AnnotatedSentence>, String)> {
    if !cfg.dataset.train.is_file() {
        return Err(Error::Config(format!("train split not found: {}", cfg.dataset.train.display())));
    }
    let (train, hash) = load_split(cfg, &cfg.dataset.train, "train")?;
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    Ok((train, hash))
}

/// Loads and validates all splits; also returns a digest of each split file.
pub fn load_dataset(cfg: &RunConfig) -> Result<(Dataset, BTreeMap<String, String>)> {
    let mut hashes = BTreeMap::new();
    let (train, h) = load_split(cfg, &cfg.dataset.train, "train")?;
    hashes.insert("train".to_string(), h);
    let (test, h) = load_split(cfg, &cfg.dataset.test, "test")?;
    hashes.insert("test".to_string(), h);
    let dev = match &cfg.dataset.dev {
        Some(p) => {
            let (dev, h) = load_split(cfg, p, "dev")?;
            hashes.insert("dev".to_string(), h);
            dev
        }
        None => Vec::new(),
    };
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let ds = Dataset::new(cfg.dataset.name.clone(), cfg.dataset.entity_types()?, train, dev, test)?;
    Ok((ds, hashes))
}

/// A seeded sample of `n` sentences kept in their original order, or all of
/// them when `n` is unset or not smaller than the split.
pub fn select_queries(test: &[AnnotatedSentence], n: Option<usize>, seed: u64) -> Vec<AnnotatedSentence> {
    match n {
        Some(n) if n < test.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = rand::seq::index::sample(&mut rng, test.len(), n).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| test[i].clone()).collect()
        }
        _ => test.to_vec(),
    }
}

fn http_settings(cfg: &RunConfig, base_url: &str) -> Result<HttpSettings> {
    let mut s = HttpSettings::new(base_url, Some(cfg.backend.api_key()?));
    s.timeout = Duration::from_secs(cfg.backend.timeout_secs);
    Ok(s)
}

pub fn build_embedder(cfg: &RunConfig, ledger: &Arc<UsageLedger>) -> Result<CachedEmbedder> {
    let e = &cfg.embedding;
    let cache = match &e.cache {
        Some(p) => EmbeddingCache::open(p)?,
        None => EmbeddingCache::in_memory(),
    };
    let provider: Arc<dyn EmbeddingProvider> = match e.provider {
        EmbeddingProviderKind::Hashed => Arc::new(HashedEmbedder::new(e.dim)),
        EmbeddingProviderKind::Http if e.offline => {
            return Ok(CachedEmbedder::offline("openai-compatible", &e.model, cache));
        }
        EmbeddingProviderKind::Http => {
            let base = e.base_url.as_deref().unwrap_or(&cfg.backend.base_url);
            Arc::new(HttpEmbedder::new(http_settings(cfg, base)?, e.model.clone())?.with_ledger(ledger.clone()))
        }
    };
    if e.offline {
        return Ok(CachedEmbedder::offline(provider.provider(), provider.model_id(), cache));
    }
    Ok(CachedEmbedder::new(provider, cache))
}

/// Texts the retriever of `kind` needs vectors for: token strings for the
/// label-guided retriever, whole sentences for KATE, nothing for BM25.
pub fn embedding_texts(kind: RetrieverKind, train: &[AnnotatedSentence], queries: &[AnnotatedSentence]) -> Vec<String> {
    match kind {
        RetrieverKind::LabelGuided => {
            let vocab: BTreeSet<&str> = train
                .iter()
                .chain(queries)
                .flat_map(|s| s.tokens.iter().map(String::as_str))
                .collect();
            vocab.into_iter().map(String::from).collect()
        }
        RetrieverKind::Kate => {
            let texts: BTreeSet<String> = train.iter().chain(queries).map(|s| s.text()).collect();
            texts.into_iter().collect()
        }
        RetrieverKind::Bm25 => Vec::new(),
    }
}

pub fn build_retriever(
    cfg: &RunConfig,
    kind: RetrieverKind,
    train: &Arc<Vec<AnnotatedSentence>>,
    stats: &Arc<TokenStats>,
    queries: &[AnnotatedSentence],
    embedder: &CachedEmbedder,
) -> Result<Retriever> {
    let texts = embedding_texts(kind, train, queries);
    Ok(match kind {
        RetrieverKind::LabelGuided => {
            let table = VectorTable::build(embedder, texts.iter().map(String::as_str))?;
            Retriever::LabelGuided(LabelGuidedRetriever::new(
                train.clone(),
                stats.clone(),
                Arc::new(table),
                cfg.retrieval.clone(),
            )?)
        }
        RetrieverKind::Kate => {
            let table = VectorTable::build(embedder, texts.iter().map(String::as_str))?;
            Retriever::Kate(KateRetriever::new(train, Arc::new(table))?)
        }
        RetrieverKind::Bm25 => Retriever::Bm25(Bm25Index::new(train, cfg.bm25)),
    })
}

pub fn build_chat_backend(cfg: &RunConfig) -> Result<Arc<dyn ChatBackend>> {
    let b = &cfg.backend;
    let fixture = || {
        b.fixture
            .clone()
            .ok_or_else(|| Error::Config("backend.fixture is not set".into()))
    };
    Ok(match b.mode {
        BackendMode::Http => Arc::new(HttpChatBackend::new(http_settings(cfg, &b.base_url)?)?),
        BackendMode::Replay => Arc::new(ReplayBackend::load(fixture()?)?),
        BackendMode::Record => {
            let inner = HttpChatBackend::new(http_settings(cfg, &b.base_url)?)?;
            Arc::new(RecordingBackend::new(inner, fixture()?)?)
        }
        BackendMode::Scripted => {
            let path = b
                .script
                .clone()
                .ok_or_else(|| Error::Config("backend.script is not set".into()))?;
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let replies: Vec<String> = serde_json::from_str(&text)
                .map_err(|e| Error::Data(format!("{}: expected a JSON array of strings: {e}", path.display())))?;
            if b.concurrency > 1 {
                log::warn!("scripted replies are consumed in call order; use concurrency 1 for a stable mapping");
            }
            Arc::new(ScriptedBackend::new(replies))
        }
    })
}

/// Writes the manifest, predictions, reflection log, and cost summary.
pub fn write_run_outputs(dir: &Path, manifest: &RunManifest, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, bytes: &[u8]| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    };
    write(MANIFEST_FILE, &serde_json::to_vec_pretty(manifest)?)?;

    let predicted: Vec<AnnotatedSentence> = manifest
        .records
        .iter()
        .map(|r| AnnotatedSentence::new(r.id.clone(), r.state.tokens.clone(), r.mentions()))
        .collect::<Result<_>>()?;
    write(PREDICTIONS_FILE, to_jsonl(&predicted).as_bytes())?;

    #[derive(Serialize)]
    struct LogLine<'a> {
        sentence_id: &'a str,
        #[serde(flatten)]
        entry: &'a LogEntry,
    }
    let mut log = Vec::new();
    for r in &manifest.records {
        for entry in &r.state.log {
            serde_json::to_writer(&mut log, &LogLine {
                sentence_id: &r.id,
                entry,
            })?;
            log.push(b'\n');
        }
    }
    write(REFLECTION_LOG_FILE, &log)?;

    let cost = usage_report(&manifest.usage, &cfg.backend.prices);
    write(USAGE_FILE, &serde_json::to_vec_pretty(&cost)?)
}

pub fn manifest_path(cfg: &RunConfig) -> PathBuf {
    cfg.run.output_dir.join(MANIFEST_FILE)
}

/// Runs the configured pipeline over the selected test sentences and writes
/// the outputs. On a hard error the manifest is still written, marked
/// incomplete and holding the records finished before the failure, and the
/// error is returned.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let (dataset, corpus_hashes) = load_dataset(cfg)?;
    let queries = select_queries(&dataset.test, cfg.run.subsample, cfg.run.seed);
    let desc = cfg.dataset.task_description()?;
    let train = Arc::new(dataset.train);
    let stats = Arc::new(TokenStats::build(&train, &cfg.stats));
    let index = Arc::new(SpanIndex::build(&train, &cfg.stats));

    let ledger = Arc::new(UsageLedger::default());
    let backend = build_chat_backend(cfg)?;
    let embedder = build_embedder(cfg, &ledger)?;
    let retriever = build_retriever(cfg, cfg.run.retriever, &train, &stats, &queries, &embedder)?;
    let mut client = LlmClient::new(backend, cfg.backend.model.clone()).with_ledger(ledger.clone());
    client.max_tokens_icl = cfg.backend.max_tokens_icl;
    client.max_tokens_reflect = cfg.backend.max_tokens_reflect;

    let mut pipeline = Pipeline::new(
        train,
        stats,
        index,
        retriever,
        desc,
        client,
        cfg.reflection.clone(),
        cfg.run.variant,
        cfg.retrieval.n_demos,
    )
    .with_concurrency(cfg.backend.concurrency);
    pipeline.strict_types = cfg.run.strict_types;

    log::info!("running {} queries ({} training sentences)", queries.len(), pipeline.train.len());
    let (records, error) = pipeline.run_all_partial(&queries);
    let manifest = RunManifest {
        format: MANIFEST_FORMAT.to_string(),
        complete: error.is_none(),
        error: error.as_ref().map(|e| e.to_string()),
        config_hash: cfg.config_hash(),
        corpus_hashes,
        model_id: cfg.backend.model.clone(),
        variant: cfg.run.variant,
        retriever: cfg.run.retriever,
        query_ids: queries.iter().map(|q| q.id.clone()).collect(),
        records,
        usage: ledger.snapshot(),
    };
    write_run_outputs(&cfg.run.output_dir, &manifest, cfg)?;
    match error {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}

/// Embeds every text the configured retriever will need and stores the
/// vectors in the cache file. Returns (texts requested, cache size after).
pub fn warm_embedding_cache(cfg: &RunConfig, kinds: &[RetrieverKind]) -> Result<(usize, usize)> {
    cfg.validate()?;
    if cfg.embedding.cache.is_none() {
        return Err(Error::Config("embedding.cache must be set to warm a cache".into()));
    }
    let (dataset, _) = load_dataset(cfg)?;
    let queries = select_queries(&dataset.test, cfg.run.subsample, cfg.run.seed);
    let ledger = Arc::new(UsageLedger::default());
    let embedder = build_embedder(cfg, &ledger)?;
    let mut texts = BTreeSet::new();
    for &k in kinds {
        texts.extend(embedding_texts(k, &dataset.train, &queries));
    }
    let texts: Vec<String> = texts.into_iter().collect();
    embedder.embed(&texts)?;
    Ok((texts.len(), embedder.cache_len()))
}
