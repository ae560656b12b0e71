//! TOML run configuration.
//!
//! A config file may name a dataset `preset`; the preset's retrieval and
//! reflection hyperparameters are laid down first and the file's own values
//! override them key by key. Relative paths resolve against the directory
//! holding the config file. Secrets never live in the file: the API key is
//! read from the environment variable named by `backend.api_key_env`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{BioRepair, EntityType, EntityTypeSet};
use crate::error::{Error, Result};
use crate::llm::Prices;
use crate::pipeline::{sha256_hex, Variant};
use crate::prompt::TaskDescription;
use crate::reflect::ReflectionConfig;
use crate::retriever::{Bm25Params, RetrievalConfig, RetrieverKind};
use crate::stats::StatsConfig;

pub const BASE_URL_ENV: &str = "LABELSTAT_BASE_URL";
pub const MODEL_ENV: &str = "LABELSTAT_MODEL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    #[default]
    Conll,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeSpec {
    pub label: String,
    #[serde(default)]
    pub gloss: Option<String>,
    /// Spell the gloss out in the extraction prompt too.
    #[serde(default)]
    pub icl_gloss: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    #[serde(default)]
    pub format: CorpusFormat,
    pub train: PathBuf,
    pub test: PathBuf,
    #[serde(default)]
    pub dev: Option<PathBuf>,
    #[serde(default)]
    pub bio_repair: BioRepair,
    pub types: Vec<TypeSpec>,
    /// Phrase naming where the text comes from, e.g. "a Reuters news article".
    pub source_gloss: String,
}

impl DatasetConfig {
    pub fn entity_types(&self) -> Result<EntityTypeSet> {
        EntityTypeSet::new(
            self.types
                .iter()
                .map(|t| EntityType {
                    label: t.label.clone(),
                    gloss: t.gloss.clone(),
                })
                .collect(),
        )
    }

    pub fn task_description(&self) -> Result<TaskDescription> {
        let mut desc = TaskDescription::new(self.entity_types()?, self.source_gloss.clone());
        desc.icl_glossed = self
            .types
            .iter()
            .filter(|t| t.icl_gloss)
            .map(|t| t.label.clone())
            .collect();
        Ok(desc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    #[default]
    Http,
    /// Serve stored responses; a request without one is an error.
    Replay,
    /// Call the live endpoint and append every exchange to the fixture file.
    Record,
    /// Return canned responses from a JSON array, in call order.
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub mode: BackendMode,
    pub model: String,
    pub base_url: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    /// Replay/record fixture (JSONL).
    pub fixture: Option<PathBuf>,
    /// Scripted responses (JSON array of strings).
    pub script: Option<PathBuf>,
    pub concurrency: usize,
    pub max_tokens_icl: u32,
    pub max_tokens_reflect: u32,
    pub timeout_secs: u64,
    pub prices: Prices,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            mode: BackendMode::Http,
            model: "gpt-4o-mini".into(),
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            fixture: None,
            script: None,
            concurrency: 4,
            max_tokens_icl: 1024,
            max_tokens_reflect: 2048,
            timeout_secs: 120,
            prices: Prices::default(),
        }
    }
}

impl BackendConfig {
    /// The API key, or a config error naming the variable to set.
    pub fn api_key(&self) -> Result<String> {
        match std::env::var(&self.api_key_env) {
            Ok(k) if !k.trim().is_empty() => Ok(k),
            _ => Err(Error::Config(format!(
                "environment variable {} must hold the API key",
                self.api_key_env
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingProviderKind {
    /// Local feature-hashing vectors; no network.
    #[default]
    Hashed,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub provider: EmbeddingProviderKind,
    /// Remote model id (http provider only).
    pub model: String,
    /// Vector size (hashed provider only).
    pub dim: usize,
    /// Defaults to the chat backend's base URL.
    pub base_url: Option<String>,
    /// JSONL vector cache; in memory when unset.
    pub cache: Option<PathBuf>,
    /// Never call the provider; every vector must already be cached.
    pub offline: bool,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            provider: EmbeddingProviderKind::Hashed,
            model: "text-embedding-3-small".into(),
            dim: 256,
            base_url: None,
            cache: None,
            offline: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Evaluate a seeded random sample of this many test sentences.
    pub subsample: Option<usize>,
    pub variant: Variant,
    pub retriever: RetrieverKind,
    /// Unknown entity types in model output are errors rather than dropped.
    pub strict_types: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            output_dir: PathBuf::from("out"),
            seed: 0,
            subsample: None,
            variant: Variant::IclReflect,
            retriever: RetrieverKind::LabelGuided,
            strict_types: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Zero disables the confidence interval.
    pub bootstrap_resamples: usize,
    pub confidence: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            bootstrap_resamples: 1000,
            confidence: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub preset: Option<String>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub stats: StatsConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub bm25: Bm25Params,
    #[serde(default)]
    pub reflection: ReflectionConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub run: RunSettings,
    #[serde(default)]
    pub eval: EvalSettings,
}

/// Overlays `top` onto `base`, recursing into tables.
fn deep_merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn preset_table(name: &str) -> Result<toml::Value> {
    let unknown = || Error::Config(format!("unknown preset {name:?} (conll03, ontonotes, bc2gm, ncbi, tweetner7)"));
    let retrieval = RetrievalConfig::preset(name).ok_or_else(unknown)?;
    let reflection = ReflectionConfig::preset(name).ok_or_else(unknown)?;
    let mut t = toml::Table::new();
    let conv = |e: toml::ser::Error| Error::Config(format!("preset {name}: {e}"));
    t.insert("retrieval".into(), toml::Value::try_from(retrieval).map_err(conv)?);
    t.insert("reflection".into(), toml::Value::try_from(reflection).map_err(conv)?);
    Ok(toml::Value::Table(t))
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Parses config text; relative paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let user: toml::Value = text
            .parse::<toml::Table>()
            .map(toml::Value::Table)
            .map_err(|e| Error::Config(format!("config: {e}")))?;
        let merged = match user.get("preset").and_then(|v| v.as_str()) {
            Some(name) => {
                let mut base = preset_table(name)?;
                deep_merge(&mut base, user);
                base
            }
            None => user,
        };
        let mut cfg: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {e}")))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Self::from_toml_str(&text, dir)
    }

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.dataset.train);
        resolve(base, &mut self.dataset.test);
        for p in [
            self.dataset.dev.as_mut(),
            self.backend.fixture.as_mut(),
            self.backend.script.as_mut(),
            self.embedding.cache.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
        resolve(base, &mut self.run.output_dir);
    }

    /// Applies `LABELSTAT_BASE_URL` and `LABELSTAT_MODEL` when set.
    pub fn apply_env_overrides(&mut self) {
        if let Ok(url) = std::env::var(BASE_URL_ENV) {
            if !url.is_empty() {
                self.backend.base_url = url;
            }
        }
        if let Ok(model) = std::env::var(MODEL_ENV) {
            if !model.is_empty() {
                self.backend.model = model;
            }
        }
    }

    /// Checks values and that every referenced input file exists.
    pub fn validate(&self) -> Result<()> {
        let exists = |what: &str, p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} not found: {}", p.display())))
            }
        };
        exists("train split", &self.dataset.train)?;
        exists("test split", &self.dataset.test)?;
        if let Some(dev) = &self.dataset.dev {
            exists("dev split", dev)?;
        }
        if self.dataset.types.is_empty() {
            return Err(Error::Config("dataset.types must declare at least one type".into()));
        }
        self.dataset.entity_types()?;
        self.retrieval.validate()?;
        self.reflection.validate()?;
        match self.backend.mode {
            BackendMode::Replay => match &self.backend.fixture {
                Some(p) => exists("replay fixture", p)?,
                None => return Err(Error::Config("replay mode needs backend.fixture".into())),
            },
            BackendMode::Record if self.backend.fixture.is_none() => {
                return Err(Error::Config("record mode needs backend.fixture".into()));
            }
            BackendMode::Scripted => match &self.backend.script {
                Some(p) => exists("script", p)?,
                None => return Err(Error::Config("scripted mode needs backend.script".into())),
            },
            _ => {}
        }
        if self.backend.model.trim().is_empty() {
            return Err(Error::Config("backend.model is empty".into()));
        }
        if self.backend.concurrency == 0 {
            return Err(Error::Config("backend.concurrency must be at least 1".into()));
        }
        if self.embedding.provider == EmbeddingProviderKind::Hashed && self.embedding.dim == 0 {
            return Err(Error::Config("embedding.dim must be at least 1".into()));
        }
        if self.embedding.offline && self.embedding.cache.is_none() {
            return Err(Error::Config("offline embedding needs embedding.cache".into()));
        }
        if self.run.subsample == Some(0) {
            return Err(Error::Config("run.subsample must be at least 1".into()));
        }
        let level = self.eval.confidence;
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Config(format!("eval.confidence must lie in (0, 1), got {level}")));
        }
        Ok(())
    }

    /// Digest of the effective configuration. Settings that cannot change
    /// results (concurrency, timeout, output directory) are left out.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.backend.concurrency = 0;
        c.backend.timeout_secs = 0;
        c.run.output_dir = PathBuf::new();
        sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
    }
}
