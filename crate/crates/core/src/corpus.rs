//! Pre-tokenized NER corpora: the sentence/mention model, loaders for
//! CoNLL column files and record-per-line JSON, and serializers back to both.
//!
//! Tokens are never re-tokenized and are compared case-sensitively
//! everywhere downstream.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A typed entity mention over an inclusive token range.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    pub etype: String,
    pub surface: String,
}

impl Mention {
    /// Builds a mention over `tokens[start..=end]`. Panics if out of bounds;
    /// use [`AnnotatedSentence::new`] for validated construction.
    pub fn new(tokens: &[String], start: usize, end: usize, etype: impl Into<String>) -> Self {
        Mention {
            start,
            end,
            etype: etype.into(),
            surface: tokens[start..=end].join(" "),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index <= self.end
    }

    pub fn overlaps(&self, other: &Mention) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn span(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    /// Number of token positions shared with `other`.
    pub fn overlap_len(&self, other: &Mention) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        if lo > hi {
            0
        } else {
            hi - lo + 1
        }
    }
}

/// A tokenized sentence with flat, sorted, non-overlapping mentions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub id: String,
    pub tokens: Vec<String>,
    pub mentions: Vec<Mention>,
}

impl AnnotatedSentence {
    /// Validates and normalizes: mentions are sorted by start, surfaces are
    /// recomputed from the tokens, and overlaps or out-of-range spans are rejected.
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<String>,
        mut mentions: Vec<Mention>,
    ) -> Result<Self> {
        let id = id.into();
        if let Some(pos) = tokens.iter().position(|t| t.is_empty()) {
            return Err(Error::Data(format!("sentence {id}: empty token at index {pos}")));
        }
        for m in &mut mentions {
            if m.start > m.end {
                return Err(Error::Data(format!(
                    "sentence {id}: inverted span ({}, {})",
                    m.start, m.end
                )));
            }
            if m.end >= tokens.len() {
                return Err(Error::Data(format!(
                    "sentence {id}: span ({}, {}) out of bounds for {} tokens",
                    m.start,
                    m.end,
                    tokens.len()
                )));
            }
            if m.etype.is_empty() {
                return Err(Error::Data(format!("sentence {id}: empty entity type")));
            }
            m.surface = tokens[m.start..=m.end].join(" ");
        }
        mentions.sort_by_key(|m| (m.start, m.end));
        for pair in mentions.windows(2) {
            if pair[0].overlaps(&pair[1]) {
                return Err(Error::Data(format!(
                    "sentence {id}: overlapping mentions ({}, {}) and ({}, {})",
                    pair[0].start, pair[0].end, pair[1].start, pair[1].end
                )));
            }
        }
        Ok(AnnotatedSentence {
            id,
            tokens,
            mentions,
        })
    }

    /// Convenience constructor for string-slice tokens and `(start, end, type)` triples.
    pub fn from_parts(id: &str, tokens: &[&str], spans: &[(usize, usize, &str)]) -> Result<Self> {
        let tokens: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
        let mentions = spans
            .iter()
            .map(|&(s, e, t)| Mention {
                start: s,
                end: e,
                etype: t.to_string(),
                surface: String::new(),
            })
            .collect();
        AnnotatedSentence::new(id, tokens, mentions)
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Index of the mention covering `index`, if any.
    pub fn mention_at(&self, index: usize) -> Option<usize> {
        self.mentions.iter().position(|m| m.contains(index))
    }
}

/// One declared entity type with an optional human-readable gloss.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityType {
    pub label: String,
    #[serde(default)]
    pub gloss: Option<String>,
}

/// Ordered, duplicate-free list of entity type labels.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityTypeSet {
    types: Vec<EntityType>,
}

impl EntityTypeSet {
    pub fn new(types: Vec<EntityType>) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &types {
            if t.label.is_empty() {
                return Err(Error::Config("empty entity type label".into()));
            }
            if !seen.insert(t.label.as_str()) {
                return Err(Error::Config(format!("duplicate entity type label {:?}", t.label)));
            }
        }
        Ok(EntityTypeSet { types })
    }

    /// Types without glosses.
    pub fn from_labels(labels: &[&str]) -> Result<Self> {
        Self::new(
            labels
                .iter()
                .map(|l| EntityType {
                    label: l.to_string(),
                    gloss: None,
                })
                .collect(),
        )
    }

    /// `(label, gloss)` pairs.
    pub fn with_glosses(pairs: &[(&str, &str)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|(l, g)| EntityType {
                    label: l.to_string(),
                    gloss: Some(g.to_string()),
                })
                .collect(),
        )
    }

    pub fn contains(&self, label: &str) -> bool {
        self.types.iter().any(|t| t.label == label)
    }

    pub fn iter(&self) -> impl Iterator<Item = &EntityType> {
        self.types.iter()
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }
}

/// A named dataset with its entity schema and three splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub entity_types: EntityTypeSet,
    pub train: Vec<AnnotatedSentence>,
    pub dev: Vec<AnnotatedSentence>,
    pub test: Vec<AnnotatedSentence>,
}

impl Dataset {
    /// Checks sentence id uniqueness within and across splits and that every
    /// mention type is declared.
    pub fn new(
        name: impl Into<String>,
        entity_types: EntityTypeSet,
        train: Vec<AnnotatedSentence>,
        dev: Vec<AnnotatedSentence>,
        test: Vec<AnnotatedSentence>,
    ) -> Result<Self> {
        let mut ids = HashSet::new();
        for s in train.iter().chain(&dev).chain(&test) {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Data(format!("duplicate sentence id {:?}", s.id)));
            }
            for m in &s.mentions {
                if !entity_types.contains(&m.etype) {
                    return Err(Error::Data(format!(
                        "sentence {}: unknown entity type {:?}",
                        s.id, m.etype
                    )));
                }
            }
        }
        Ok(Dataset {
            name: name.into(),
            entity_types,
            train,
            dev,
            test,
        })
    }
}

/// How to treat an `I-X` tag that does not continue an open `X` mention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BioRepair {
    /// Start a new mention as if the tag were `B-X`.
    #[default]
    AsBegin,
    /// Reject the file.
    Strict,
}

#[derive(Debug, Clone, Default)]
pub struct ConllOptions {
    pub repair: BioRepair,
    /// Prefix for generated sentence ids (`<prefix>-<n>`); defaults to the file stem.
    pub id_prefix: Option<String>,
}

enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

fn parse_tag(tag: &str) -> Option<Tag<'_>> {
    if tag == "O" {
        return Some(Tag::Outside);
    }
    let (prefix, label) = tag.split_once('-')?;
    if label.is_empty() {
        return None;
    }
    match prefix {
        "B" => Some(Tag::Begin(label)),
        "I" => Some(Tag::Inside(label)),
        _ => None,
    }
}

/// Reads a CoNLL column file: one token per line, the last whitespace-separated
/// column is the BIO tag, blank lines separate sentences, `-DOCSTART-` lines are dropped.
pub fn load_conll(
    path: impl AsRef<Path>,
    schema: &EntityTypeSet,
    opts: &ConllOptions,
) -> Result<Vec<AnnotatedSentence>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let prefix = opts.id_prefix.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "s".into())
    });
    parse_conll(&text, &path.display().to_string(), &prefix, schema, opts.repair)
}

/// Parses CoNLL column text. `source` names the input in error messages.
pub fn parse_conll(
    text: &str,
    source: &str,
    id_prefix: &str,
    schema: &EntityTypeSet,
    repair: BioRepair,
) -> Result<Vec<AnnotatedSentence>> {
    let mut out = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut spans: Vec<(usize, usize, String)> = Vec::new();
    let mut open: Option<(usize, String)> = None;

    let err = |line: usize, msg: String| Error::Conll {
        path: source.to_string(),
        line,
        msg,
    };

    let flush = |tokens: &mut Vec<String>,
                     spans: &mut Vec<(usize, usize, String)>,
                     open: &mut Option<(usize, String)>,
                     out: &mut Vec<AnnotatedSentence>|
     -> Result<()> {
        if let Some((s, t)) = open.take() {
            spans.push((s, tokens.len() - 1, t));
        }
        if tokens.is_empty() {
            return Ok(());
        }
        let toks = std::mem::take(tokens);
        let mentions = spans
            .drain(..)
            .map(|(s, e, t)| Mention::new(&toks, s, e, t))
            .collect();
        let id = format!("{}-{}", id_prefix, out.len());
        out.push(AnnotatedSentence::new(id, toks, mentions)?);
        Ok(())
    };

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() {
            flush(&mut tokens, &mut spans, &mut open, &mut out)?;
            continue;
        }
        if line.starts_with("-DOCSTART-") {
            flush(&mut tokens, &mut spans, &mut open, &mut out)?;
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < 2 {
            return Err(err(lineno, format!("expected token and tag columns, got {line:?}")));
        }
        let token = cols[0];
        let tag_str = cols[cols.len() - 1];
        let tag = parse_tag(tag_str).ok_or_else(|| err(lineno, format!("bad tag {tag_str:?}")))?;
        let index = tokens.len();
        match tag {
            Tag::Outside => {
                if let Some((s, t)) = open.take() {
                    spans.push((s, index - 1, t));
                }
            }
            Tag::Begin(label) | Tag::Inside(label) => {
                if !schema.contains(label) {
                    return Err(err(lineno, format!("unknown entity type {label:?}")));
                }
                let continues = matches!(tag, Tag::Inside(_))
                    && open.as_ref().is_some_and(|(_, t)| t == label);
                if !continues {
                    if matches!(tag, Tag::Inside(_)) && repair == BioRepair::Strict {
                        return Err(err(
                            lineno,
                            format!("{tag_str} without a preceding B-{label} or I-{label}"),
                        ));
                    }
                    if let Some((s, t)) = open.take() {
                        spans.push((s, index - 1, t));
                    }
                    open = Some((index, label.to_string()));
                }
            }
        }
        tokens.push(token.to_string());
    }
    flush(&mut tokens, &mut spans, &mut open, &mut out)?;
    Ok(out)
}

/// BIO2 tags for a sentence (`B-` opens every mention).
pub fn to_bio_tags(sentence: &AnnotatedSentence) -> Vec<String> {
    let mut tags = vec!["O".to_string(); sentence.tokens.len()];
    for m in &sentence.mentions {
        tags[m.start] = format!("B-{}", m.etype);
        for tag in &mut tags[m.start + 1..=m.end] {
            *tag = format!("I-{}", m.etype);
        }
    }
    tags
}

/// Two-column CoNLL text (`token tag`), blank line after each sentence.
pub fn to_conll(sentences: &[AnnotatedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for (tok, tag) in s.tokens.iter().zip(to_bio_tags(s)) {
            let _ = writeln!(out, "{tok} {tag}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonEntity {
    start: usize,
    end: usize,
    #[serde(rename = "type")]
    etype: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonRecord {
    id: String,
    tokens: Vec<String>,
    #[serde(default)]
    entities: Vec<JsonEntity>,
}

/// Reads record-per-line JSON (`{"id", "tokens", "entities": [{"start","end","type"}]}`,
/// inclusive indices).
pub fn load_jsonl(path: impl AsRef<Path>, schema: &EntityTypeSet) -> Result<Vec<AnnotatedSentence>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, schema)
}

pub fn parse_jsonl(text: &str, schema: &EntityTypeSet) -> Result<Vec<AnnotatedSentence>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(line)
            .map_err(|e| Error::Data(format!("line {}: {e}", lineno + 1)))?;
        let mut mentions = Vec::with_capacity(rec.entities.len());
        for ent in rec.entities {
            if ent.start > ent.end {
                return Err(Error::Data(format!(
                    "record {}: inverted span ({}, {})",
                    rec.id, ent.start, ent.end
                )));
            }
            if !schema.contains(&ent.etype) {
                return Err(Error::Data(format!(
                    "record {}: unknown entity type {:?}",
                    rec.id, ent.etype
                )));
            }
            mentions.push(Mention {
                start: ent.start,
                end: ent.end,
                etype: ent.etype,
                surface: String::new(),
            });
        }
        out.push(AnnotatedSentence::new(rec.id, rec.tokens, mentions)?);
    }
    Ok(out)
}

pub fn to_jsonl(sentences: &[AnnotatedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        let rec = JsonRecord {
            id: s.id.clone(),
            tokens: s.tokens.clone(),
            entities: s
                .mentions
                .iter()
                .map(|m| JsonEntity {
                    start: m.start,
                    end: m.end,
                    etype: m.etype.clone(),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}
