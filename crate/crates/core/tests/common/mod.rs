#![allow(dead_code)]

pub mod criteria;
pub mod goldens;
pub mod oracles;
pub mod synth;

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use labelstat::corpus::{to_jsonl, AnnotatedSentence};
use labelstat::fixtures::newswire;
use labelstat::llm::{
    CachedEmbedder, ChatBackend, ChatRequest, ChatResponse, EmbeddingCache, HashedEmbedder, LlmClient, Usage,
    VectorTable,
};
use labelstat::pipeline::{Pipeline, Variant};
use labelstat::prompt::TaskDescription;
use labelstat::reflect::ReflectionConfig;
use labelstat::retriever::{LabelGuidedRetriever, RetrievalConfig, Retriever};
use labelstat::stats::{SpanIndex, StatsConfig, TokenStats};

pub const MODEL: &str = "gpt-4o-mini";

pub fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn replay_fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/appendix_replay.jsonl")
}

/// Records every request and forwards it.
pub struct Capturing<B> {
    pub inner: B,
    pub prompts: Mutex<Vec<String>>,
}

impl<B> Capturing<B> {
    pub fn new(inner: B) -> Self {
        Capturing {
            inner,
            prompts: Mutex::new(Vec::new()),
        }
    }
}

impl<B: ChatBackend> ChatBackend for Capturing<B> {
    fn complete(&self, req: &ChatRequest) -> labelstat::Result<ChatResponse> {
        self.prompts.lock().unwrap().push(req.messages[0].content.clone());
        self.inner.complete(req)
    }
}

/// The label-guided pipeline over the newswire corpus with default settings,
/// matching what a default config file over the same corpus builds.
pub fn newswire_pipeline(backend: Arc<dyn ChatBackend>, concurrency: usize) -> Pipeline {
    let nw = newswire();
    let stats_cfg = StatsConfig::default();
    let train = Arc::new(nw.train.clone());
    let stats = Arc::new(TokenStats::build(&train, &stats_cfg));
    let index = Arc::new(SpanIndex::build(&train, &stats_cfg));
    let embedder = CachedEmbedder::new(Arc::new(HashedEmbedder::new(256)), EmbeddingCache::in_memory());
    let mut vocab: Vec<&str> = nw.train.iter().chain(&nw.test).flat_map(|s| s.tokens.iter().map(String::as_str)).collect();
    vocab.sort_unstable();
    vocab.dedup();
    let table = Arc::new(VectorTable::build(&embedder, vocab).unwrap());
    let retriever =
        LabelGuidedRetriever::new(train.clone(), stats.clone(), table, RetrievalConfig::default()).unwrap();
    let client = LlmClient::new(backend, MODEL);
    Pipeline::new(
        train,
        stats,
        index,
        Retriever::LabelGuided(retriever),
        TaskDescription::newswire(),
        client,
        ReflectionConfig::default(),
        Variant::IclReflect,
        RetrievalConfig::default().n_demos,
    )
    .with_concurrency(concurrency)
}

/// Writes the newswire corpus as JSONL plus a replay config into `dir` and
/// returns the config path.
pub fn write_newswire_experiment(dir: &Path, concurrency: usize, extra: &str) -> PathBuf {
    let nw = newswire();
    std::fs::write(dir.join("train.jsonl"), to_jsonl(&nw.train)).unwrap();
    std::fs::write(dir.join("test.jsonl"), to_jsonl(&nw.test)).unwrap();
    let config = format!(
        r#"
[dataset]
name = "newswire"
format = "jsonl"
train = "train.jsonl"
test = "test.jsonl"
source_gloss = "a Reuters news article"
types = [
  {{ label = "PER", gloss = "Person" }},
  {{ label = "LOC", gloss = "Location" }},
  {{ label = "ORG", gloss = "Organization" }},
  {{ label = "MISC", gloss = "Miscellaneous", icl_gloss = true }},
]

[backend]
mode = "replay"
model = "{MODEL}"
fixture = "{fixture}"
concurrency = {concurrency}

[run]
output_dir = "out"
{extra}
"#,
        fixture = replay_fixture_path().display()
    );
    let path = dir.join("experiment.toml");
    std::fs::write(&path, config).unwrap();
    path
}

pub fn gold_test() -> Vec<AnnotatedSentence> {
    newswire().test
}

/// Answers prompts the way the worked reflection exchanges do. Used only to
/// regenerate the replay fixture.
pub struct AppendixResponder;

const BITAR_BOUNDARY: &str = "Boundary Token: Bitar  \nTraining Data Stats: 0 entity, 0 context, 0 regular  \nContextual Meaning: A surname used on its own to refer to the player making the saves.  \nRationale: There are no positive or negative examples and no data stats for this token, and the whole name is a single token, so the boundary is already correct.  \n\nUpdated Predicted Entity (JSON format):  \n{\"name\": \"Bitar\", \"type\": \"PER\"}";

impl ChatBackend for AppendixResponder {
    fn complete(&self, req: &ChatRequest) -> labelstat::Result<ChatResponse> {
        let prompt = &req.messages[0].content;
        let text = if prompt.starts_with("Here is the JSON template") {
            if prompt.ends_with("Input: Xinhua did not say when Qinglan port in Wenchang city would be opened to foreign vessels .\nOutput: ") {
                r#"{"named entities": [{"name": "Xinhua", "type": "ORG"}, {"name": "Wenchang city", "type": "LOC"}]}"#.to_string()
            } else {
                r#"{"named entities": []}"#.to_string()
            }
        } else if prompt.contains("<candidate_token>\nBitar\n") {
            golden("unseen_output.txt")
        } else if prompt.contains("<candidate_token>\nItalian\n") {
            golden("fn_output.txt")
        } else if prompt.contains("<predicted_entity>\n{\"name\": \"Wenchang city\"") {
            golden("boundary_output.txt")
        } else if prompt.contains("<predicted_entity>\n{\"name\": \"Bitar\"") {
            BITAR_BOUNDARY.to_string()
        } else {
            panic!("no scripted answer for prompt:\n{prompt}");
        };
        Ok(ChatResponse {
            usage: Usage::estimate(prompt, &text),
            text,
        })
    }
}
