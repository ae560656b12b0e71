//! Chat-completion and embedding backends.
//!
//! Every backend sits behind [`ChatBackend`]; [`LlmClient`] adds request
//! construction and usage accounting. The replay backend keys stored
//! responses by a SHA-256 of the canonical request, which makes whole
//! pipeline runs reproducible offline.

mod backends;
mod embed;
mod usage;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use backends::{
    HttpChatBackend, HttpSettings, RecordingBackend, ReplayBackend, ReplayRecord, RetryPolicy,
    ScriptedBackend,
};
pub use embed::{
    cosine, cosine_with_norms, norm, CachedEmbedder, EmbeddingCache, EmbeddingProvider,
    HashedEmbedder, HttpEmbedder, VectorTable,
};
pub use usage::{usage_report, CostReport, Phase, PhaseCost, PhaseUsage, Prices, UsageLedger, UsageSnapshot};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, prompt: impl Into<String>, max_output_tokens: u32) -> Self {
        ChatRequest {
            model_id: model_id.into(),
            messages: vec![Message::user(prompt)],
            temperature: 0.0,
            max_output_tokens,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Config(format!("temperature {} < 0", self.temperature)));
        }
        if self.messages.is_empty() || self.messages.iter().any(|m| m.content.is_empty()) {
            return Err(Error::Config("chat request with empty content".into()));
        }
        Ok(())
    }

    /// Stable hex digest of `(model_id, messages, temperature)`.
    ///
    /// The request is serialized with a fixed field order before hashing, so
    /// the digest does not depend on platform or map iteration order. The
    /// output-token budget is deliberately excluded.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            model_id: &'a str,
            messages: &'a [Message],
            temperature: f64,
        }
        let canon = Canonical {
            model_id: &self.model_id,
            messages: &self.messages,
            temperature: self.temperature,
        };
        let bytes = serde_json::to_vec(&canon).expect("request serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// True when counts were approximated locally rather than reported by the provider.
    #[serde(default)]
    pub estimated: bool,
}

impl Usage {
    /// Character heuristic used when a provider reports nothing: one token per
    /// four characters, rounded up.
    pub fn estimate(input: &str, output: &str) -> Self {
        Usage {
            input_tokens: estimate_tokens(input),
            output_tokens: estimate_tokens(output),
            estimated: true,
        }
    }
}

pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse>;
}

/// Issues prompts through a backend and books usage per phase.
#[derive(Clone)]
pub struct LlmClient {
    backend: Arc<dyn ChatBackend>,
    ledger: Arc<UsageLedger>,
    pub model_id: String,
    pub max_tokens_icl: u32,
    pub max_tokens_reflect: u32,
}

/// A completed call: the response plus the request digest for audit logs.
#[derive(Debug, Clone)]
pub struct Completion {
    pub text: String,
    pub request_hash: String,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn ChatBackend>, model_id: impl Into<String>) -> Self {
        LlmClient {
            backend,
            ledger: Arc::new(UsageLedger::default()),
            model_id: model_id.into(),
            max_tokens_icl: 1024,
            max_tokens_reflect: 2048,
        }
    }

    pub fn with_ledger(mut self, ledger: Arc<UsageLedger>) -> Self {
        self.ledger = ledger;
        self
    }

    pub fn ledger(&self) -> &Arc<UsageLedger> {
        &self.ledger
    }

    pub fn ask(&self, prompt: &str, phase: Phase) -> Result<Completion> {
        let budget = match phase {
            Phase::Icl => self.max_tokens_icl,
            _ => self.max_tokens_reflect,
        };
        let req = ChatRequest::new(&self.model_id, prompt, budget);
        req.validate()?;
        let resp = self.backend.complete(&req)?;
        self.ledger.record(phase, resp.usage);
        Ok(Completion {
            text: resp.text,
            request_hash: req.hash(),
        })
    }
}
