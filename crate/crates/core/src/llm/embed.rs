use std::collections::{HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backends::HttpSettings;
use super::{estimate_tokens, Phase, Usage, UsageLedger};
use crate::error::{Error, Result};

pub trait EmbeddingProvider: Send + Sync {
    /// Provider name, part of every cache key.
    fn provider(&self) -> &str;
    fn model_id(&self) -> &str;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    cosine_with_norms(a, norm(a), b, norm(b))
}

pub fn cosine_with_norms(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (na * nb)
}

/// Offline embedder: signed feature hashing of the text, its words, and the
/// character trigrams of each word, L2-normalized. Deterministic across
/// platforms; similar spellings land near each other.
#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    dim: usize,
    model: String,
}

impl HashedEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashedEmbedder {
            dim,
            model: format!("hashed-trigram-{dim}"),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn add_feature(&self, v: &mut [f64], feature: &str, weight: f64) {
        let digest = Sha256::digest(feature.as_bytes());
        let mut idx = [0u8; 8];
        idx.copy_from_slice(&digest[..8]);
        let slot = (u64::from_le_bytes(idx) % self.dim as u64) as usize;
        let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
        v[slot] += sign * weight;
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        self.add_feature(&mut v, &format!("T:{text}"), 1.0);
        for word in text.split_whitespace() {
            self.add_feature(&mut v, &format!("W:{word}"), 1.0);
            let chars: Vec<char> = format!("^{word}$").chars().collect();
            for tri in chars.windows(3) {
                let s: String = tri.iter().collect();
                self.add_feature(&mut v, &format!("C:{s}"), 0.5);
            }
        }
        let n = norm(&v);
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        v
    }
}

impl EmbeddingProvider for HashedEmbedder {
    fn provider(&self) -> &str {
        "hashed"
    }

    fn model_id(&self) -> &str {
        &self.model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// OpenAI-compatible `/embeddings` client.
pub struct HttpEmbedder {
    settings: HttpSettings,
    client: reqwest::blocking::Client,
    model: String,
    batch_size: usize,
    ledger: Option<Arc<UsageLedger>>,
}

impl HttpEmbedder {
    pub fn new(settings: HttpSettings, model: impl Into<String>) -> Result<Self> {
        let client = settings.client()?;
        Ok(HttpEmbedder {
            settings,
            client,
            model: model.into(),
            batch_size: 256,
            ledger: None,
        })
    }

    pub fn with_ledger(mut self, ledger: Arc<UsageLedger>) -> Self {
        self.ledger = Some(ledger);
        self
    }
}

#[derive(Deserialize)]
struct EmbeddingBody {
    data: Vec<EmbeddingDatum>,
    #[serde(default)]
    usage: Option<super::backends::WireUsage>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

impl EmbeddingProvider for HttpEmbedder {
    fn provider(&self) -> &str {
        "openai-compatible"
    }

    fn model_id(&self) -> &str {
        &self.model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.batch_size) {
            let body = serde_json::json!({"model": self.model, "input": batch});
            let value = self.settings.post_json(&self.client, "embeddings", &body)?;
            let mut parsed: EmbeddingBody = serde_json::from_value(value)
                .map_err(|e| Error::Backend(format!("unexpected embeddings shape: {e}")))?;
            if parsed.data.len() != batch.len() {
                return Err(Error::Backend(format!(
                    "embeddings endpoint returned {} vectors for {} inputs",
                    parsed.data.len(),
                    batch.len()
                )));
            }
            parsed.data.sort_by_key(|d| d.index);
            if let Some(ledger) = &self.ledger {
                let usage = match parsed.usage {
                    Some(u) => Usage {
                        input_tokens: u.prompt_tokens,
                        output_tokens: 0,
                        estimated: false,
                    },
                    None => Usage {
                        input_tokens: batch.iter().map(|t| estimate_tokens(t)).sum(),
                        output_tokens: 0,
                        estimated: true,
                    },
                };
                ledger.record(Phase::Embedding, usage);
            }
            out.extend(parsed.data.into_iter().map(|d| d.embedding));
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    provider: String,
    model: String,
    text: String,
    vector: Vec<f64>,
}

fn cache_key(provider: &str, model: &str, text: &str) -> String {
    let mut h = Sha256::new();
    for part in [provider, model, text] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Append-only JSONL vector cache keyed by `(provider, model, text)`.
pub struct EmbeddingCache {
    path: Option<PathBuf>,
    vectors: HashMap<String, Arc<[f64]>>,
    dim: Option<usize>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        EmbeddingCache {
            path: None,
            vectors: HashMap::new(),
            dim: None,
        }
    }

    /// Opens (or starts) a cache file. Any malformed line is a hard error.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut cache = EmbeddingCache {
            path: Some(path.clone()),
            vectors: HashMap::new(),
            dim: None,
        };
        if !path.exists() {
            return Ok(cache);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |why: String| {
                Error::CacheCorrupt(format!("{} line {}: {why}", path.display(), i + 1))
            };
            let rec: CacheLine = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
            if rec.key != cache_key(&rec.provider, &rec.model, &rec.text) {
                return Err(corrupt("key does not match contents".into()));
            }
            cache.check_vector(&rec.vector).map_err(|e| corrupt(e.to_string()))?;
            cache.vectors.insert(rec.key, rec.vector.into());
        }
        Ok(cache)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    fn check_vector(&mut self, v: &[f64]) -> Result<()> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("non-finite embedding component".into()));
        }
        match self.dim {
            Some(d) if d != v.len() => Err(Error::Data(format!(
                "embedding dimension {} differs from {}",
                v.len(),
                d
            ))),
            _ => {
                self.dim = Some(v.len());
                Ok(())
            }
        }
    }

    pub fn get(&self, provider: &str, model: &str, text: &str) -> Option<Arc<[f64]>> {
        self.vectors.get(&cache_key(provider, model, text)).cloned()
    }

    fn insert_many(&mut self, provider: &str, model: &str, items: Vec<(String, Vec<f64>)>) -> Result<()> {
        let mut lines = String::new();
        for (text, vector) in items {
            self.check_vector(&vector)?;
            let key = cache_key(provider, model, &text);
            if self.path.is_some() {
                let line = CacheLine {
                    key: key.clone(),
                    provider: provider.into(),
                    model: model.into(),
                    text,
                    vector: vector.clone(),
                };
                lines.push_str(&serde_json::to_string(&line)?);
                lines.push('\n');
            }
            self.vectors.insert(key, vector.into());
        }
        if let (Some(path), false) = (&self.path, lines.is_empty()) {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            f.write_all(lines.as_bytes()).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// A provider fronted by a cache. Without a provider every miss is an error,
/// which is how offline runs guarantee they never reach the network.
pub struct CachedEmbedder {
    provider: Option<Arc<dyn EmbeddingProvider>>,
    provider_name: String,
    model: String,
    cache: Mutex<EmbeddingCache>,
}

impl CachedEmbedder {
    pub fn new(provider: Arc<dyn EmbeddingProvider>, cache: EmbeddingCache) -> Self {
        CachedEmbedder {
            provider_name: provider.provider().to_string(),
            model: provider.model_id().to_string(),
            provider: Some(provider),
            cache: Mutex::new(cache),
        }
    }

    pub fn offline(provider_name: &str, model: &str, cache: EmbeddingCache) -> Self {
        CachedEmbedder {
            provider: None,
            provider_name: provider_name.into(),
            model: model.into(),
            cache: Mutex::new(cache),
        }
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<Arc<[f64]>>> {
        let mut cache = self.cache.lock().expect("cache lock");
        let mut seen = HashSet::new();
        let misses: Vec<String> = texts
            .iter()
            .filter(|t| cache.get(&self.provider_name, &self.model, t).is_none())
            .filter(|t| seen.insert(t.as_str()))
            .cloned()
            .collect();
        if !misses.is_empty() {
            let provider = self.provider.as_ref().ok_or_else(|| {
                Error::MissingVector(format!(
                    "{} text(s) not in the embedding cache, first: {:?}",
                    misses.len(),
                    misses[0]
                ))
            })?;
            log::info!("embedding {} uncached text(s) via {}", misses.len(), self.provider_name);
            let vectors = provider.embed(&misses)?;
            if vectors.len() != misses.len() {
                return Err(Error::Backend(format!(
                    "provider returned {} vectors for {} texts",
                    vectors.len(),
                    misses.len()
                )));
            }
            cache.insert_many(&self.provider_name, &self.model, misses.into_iter().zip(vectors).collect())?;
        }
        Ok(texts
            .iter()
            .map(|t| cache.get(&self.provider_name, &self.model, t).expect("cached above"))
            .collect())
    }
}

/// Text → vector lookup for one run.
#[derive(Debug, Clone, Default)]
pub struct VectorTable {
    vectors: HashMap<String, Arc<[f64]>>,
    dim: usize,
}

impl VectorTable {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Arc<[f64]>)>) -> Result<Self> {
        let mut table = VectorTable::default();
        for (text, v) in pairs {
            if table.vectors.is_empty() {
                table.dim = v.len();
            } else if v.len() != table.dim {
                return Err(Error::Data(format!(
                    "vector for {text:?} has dimension {} (expected {})",
                    v.len(),
                    table.dim
                )));
            }
            table.vectors.insert(text, v);
        }
        Ok(table)
    }

    /// Embeds the distinct texts and tabulates them.
    pub fn build<'a>(embedder: &CachedEmbedder, texts: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut distinct: Vec<String> = texts
            .into_iter()
            .filter(|t| seen.insert(*t))
            .map(str::to_string)
            .collect();
        distinct.sort();
        let vectors = embedder.embed(&distinct)?;
        Self::from_pairs(distinct.into_iter().zip(vectors))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, text: &str) -> Result<&[f64]> {
        self.vectors
            .get(text)
            .map(|v| &v[..])
            .ok_or_else(|| Error::MissingVector(text.to_string()))
    }
}
