use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, Usage};
use crate::error::{Error, Result};

/// Returns queued responses in order; errors once the queue is empty.
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<String>>,
}

impl ScriptedBackend {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedBackend {
            queue: Mutex::new(responses.into_iter().map(Into::into).collect()),
        }
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("scripted queue lock").len()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse> {
        let text = self
            .queue
            .lock()
            .expect("scripted queue lock")
            .pop_front()
            .ok_or(Error::QueueExhausted)?;
        let prompt: String = req.messages.iter().map(|m| m.content.as_str()).collect();
        Ok(ChatResponse {
            usage: Usage::estimate(&prompt, &text),
            text,
        })
    }
}

/// One line of a replay store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub hash: String,
    pub request: ChatRequest,
    pub response: String,
    pub usage: Usage,
}

impl ReplayRecord {
    pub fn new(request: ChatRequest, response: ChatResponse) -> Self {
        ReplayRecord {
            hash: request.hash(),
            request,
            response: response.text,
            usage: response.usage,
        }
    }
}

/// Serves stored responses keyed by request hash. A miss is an error.
pub struct ReplayBackend {
    records: HashMap<String, ReplayRecord>,
}

impl ReplayBackend {
    pub fn from_records(records: impl IntoIterator<Item = ReplayRecord>) -> Self {
        ReplayBackend {
            records: records.into_iter().map(|r| (r.hash.clone(), r)).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReplayRecord = serde_json::from_str(line)
                .map_err(|e| Error::Data(format!("replay store line {}: {e}", i + 1)))?;
            if rec.hash != rec.request.hash() {
                return Err(Error::Data(format!(
                    "replay store line {}: stored hash does not match request",
                    i + 1
                )));
            }
            records.push(rec);
        }
        Ok(Self::from_records(records))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, hash: &str) -> Option<&ReplayRecord> {
        self.records.get(hash)
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse> {
        let hash = req.hash();
        let rec = self.records.get(&hash).ok_or(Error::ReplayMiss(hash))?;
        Ok(ChatResponse {
            text: rec.response.clone(),
            usage: rec.usage,
        })
    }
}

/// Forwards to an inner backend and appends every new exchange to a replay store.
pub struct RecordingBackend<B> {
    inner: B,
    path: PathBuf,
    state: Mutex<(File, std::collections::HashSet<String>)>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut known = std::collections::HashSet::new();
        if path.exists() {
            let existing = ReplayBackend::load(&path)?;
            known.extend(existing.records.into_keys());
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(RecordingBackend {
            inner,
            path,
            state: Mutex::new((file, known)),
        })
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse> {
        let resp = self.inner.complete(req)?;
        let rec = ReplayRecord::new(req.clone(), resp.clone());
        let mut guard = self.state.lock().expect("recorder lock");
        if guard.1.insert(rec.hash.clone()) {
            let line = serde_json::to_string(&rec)?;
            writeln!(guard.0, "{line}").map_err(|e| Error::io(&self.path, e))?;
        }
        Ok(resp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base: Duration,
    pub factor: f64,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 5,
            base: Duration::from_secs(1),
            factor: 2.0,
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry `attempt` (0-based), with up to 25% random jitter.
    pub fn delay(&self, attempt: u32) -> Duration {
        let raw = self.base.as_secs_f64() * self.factor.powi(attempt as i32);
        let capped = raw.min(self.max_delay.as_secs_f64());
        let jitter = rand::thread_rng().gen_range(0.0..=0.25);
        Duration::from_secs_f64(capped * (1.0 + jitter))
    }

    /// Runs `op` until it succeeds, fails permanently, or retries run out.
    pub(crate) fn run<T>(&self, mut op: impl FnMut() -> Attempt<T>) -> Result<T> {
        let mut attempt = 0;
        loop {
            match op() {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => {
                    if attempt >= self.retries {
                        return Err(e);
                    }
                    let wait = self.delay(attempt);
                    log::warn!("{e}; retrying in {:.1}s", wait.as_secs_f64());
                    std::thread::sleep(wait);
                    attempt += 1;
                }
            }
        }
    }
}

pub(crate) enum Attempt<T> {
    Done(T),
    Retry(Error),
    Fatal(Error),
}

/// Connection settings for an OpenAI-compatible endpoint.
#[derive(Debug, Clone)]
pub struct HttpSettings {
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl HttpSettings {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        HttpSettings {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }

    pub(crate) fn client(&self) -> Result<reqwest::blocking::Client> {
        reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| Error::Backend(format!("http client: {e}")))
    }

    /// POSTs `body` to `{base_url}/{endpoint}` with retries on transport
    /// errors, 429, and 5xx.
    pub(crate) fn post_json(
        &self,
        client: &reqwest::blocking::Client,
        endpoint: &str,
        body: &serde_json::Value,
    ) -> Result<serde_json::Value> {
        let url = format!("{}/{}", self.base_url, endpoint);
        self.retry.run(|| {
            let mut rb = client.post(&url).json(body);
            if let Some(key) = &self.api_key {
                rb = rb.bearer_auth(key);
            }
            let resp = match rb.send() {
                Ok(r) => r,
                Err(e) => return Attempt::Retry(Error::Backend(format!("{url}: {e}"))),
            };
            let status = resp.status();
            let text = match resp.text() {
                Ok(t) => t,
                Err(e) => return Attempt::Retry(Error::Backend(format!("{url}: {e}"))),
            };
            if status.as_u16() == 429 || status.is_server_error() {
                return Attempt::Retry(Error::Backend(format!("{url}: HTTP {status}: {text}")));
            }
            if !status.is_success() {
                return Attempt::Fatal(Error::Backend(format!("{url}: HTTP {status}: {text}")));
            }
            match serde_json::from_str(&text) {
                Ok(v) => Attempt::Done(v),
                Err(e) => Attempt::Fatal(Error::Backend(format!("{url}: bad JSON body: {e}"))),
            }
        })
    }
}

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpChatBackend {
    settings: HttpSettings,
    client: reqwest::blocking::Client,
}

impl HttpChatBackend {
    pub fn new(settings: HttpSettings) -> Result<Self> {
        let client = settings.client()?;
        Ok(HttpChatBackend { settings, client })
    }
}

#[derive(Deserialize)]
struct ChatCompletionBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
pub(crate) struct WireUsage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse> {
        let body = serde_json::json!({
            "model": req.model_id,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        let value = self
            .settings
            .post_json(&self.client, "chat/completions", &body)?;
        let parsed: ChatCompletionBody = serde_json::from_value(value)
            .map_err(|e| Error::Backend(format!("unexpected chat completion shape: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Error::Backend("chat completion without content".into()))?;
        let usage = match parsed.usage {
            Some(u) => Usage {
                input_tokens: u.prompt_tokens,
                output_tokens: u.completion_tokens,
                estimated: false,
            },
            None => {
                let prompt: String = req.messages.iter().map(|m| m.content.as_str()).collect();
                Usage::estimate(&prompt, &text)
            }
        };
        Ok(ChatResponse { text, usage })
    }
}
