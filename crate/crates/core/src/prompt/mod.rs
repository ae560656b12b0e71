//! Prompt rendering for in-context extraction and the three reflection
//! passes, plus parsing of model replies back into token spans.

mod parse;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, EntityTypeSet};
use crate::retriever::SpanDemos;
use crate::stats::{SpanKind, SpanRecord, TokenCategoryCounts};

pub use parse::{
    align_mentions, parse_entity_output, parse_reflection_output, AlignPolicy, Alignment,
    ParseFailure, ParseOptions, ParsedEntity, ParsedEntityList, ReflectionUpdate,
};

const ICL_TEMPLATE: &str = include_str!("../../templates/icl.txt");
const UNSEEN_TEMPLATE: &str = include_str!("../../templates/unseen.txt");
const FN_TEMPLATE: &str = include_str!("../../templates/fn.txt");
const BOUNDARY_TEMPLATE: &str = include_str!("../../templates/boundary.txt");

/// Fills `{{key}}` slots in one pass, so substituted text is never rescanned.
fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let template = template.strip_suffix('\n').unwrap_or(template);
    let lookup: HashMap<&str, &str> = slots.iter().copied().collect();
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(i) = rest.find("{{") {
        out.push_str(&rest[..i]);
        let after = &rest[i + 2..];
        let j = after.find("}}").expect("unterminated template slot");
        let key = &after[..j];
        out.push_str(lookup.get(key).unwrap_or_else(|| panic!("no value for slot {key}")));
        rest = &after[j + 2..];
    }
    out.push_str(rest);
    out
}

/// What the model is asked to extract, and how the entity types are named.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDescription {
    /// Phrase naming the text source, e.g. "a Reuters news article".
    pub source_gloss: String,
    pub types: EntityTypeSet,
    /// Labels whose gloss is spelled out in the extraction prompt.
    pub icl_glossed: Vec<String>,
}

impl TaskDescription {
    pub fn new(types: EntityTypeSet, source_gloss: impl Into<String>) -> Self {
        TaskDescription {
            source_gloss: source_gloss.into(),
            types,
            icl_glossed: Vec::new(),
        }
    }

    /// The newswire preset: four types, only MISC glossed in the extraction prompt.
    pub fn newswire() -> Self {
        TaskDescription {
            source_gloss: "a Reuters news article".into(),
            types: crate::fixtures::newswire_types(),
            icl_glossed: vec!["MISC".into()],
        }
    }

    fn icl_type_list(&self) -> String {
        let items: Vec<String> = self
            .types
            .iter()
            .map(|t| match (&t.gloss, self.icl_glossed.contains(&t.label)) {
                (Some(g), true) => format!("{} ({})", quote(&t.label), quote(g)),
                _ => quote(&t.label),
            })
            .collect();
        join_list(&items, "and")
    }

    fn type_choice(&self) -> String {
        let items: Vec<String> = self
            .types
            .iter()
            .map(|t| match &t.gloss {
                Some(g) => format!("{} ({g})", quote(&t.label)),
                None => quote(&t.label),
            })
            .collect();
        match items.len() {
            1 => format!("the named entity type: {}", items[0]),
            n => format!(
                "one of the {} named entity types: {}",
                number_word(n),
                join_list(&items, "or")
            ),
        }
    }
}

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

fn number_word(n: usize) -> String {
    const WORDS: [&str; 13] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
        "eleven", "twelve",
    ];
    WORDS.get(n).map(|w| w.to_string()).unwrap_or_else(|| n.to_string())
}

/// "a", "a and b", "a, b, and c".
fn join_list(items: &[String], conj: &str) -> String {
    match items {
        [] => String::new(),
        [a] => a.clone(),
        [a, b] => format!("{a} {conj} {b}"),
        [init @ .., last] => format!("{}, {conj} {last}", init.join(", ")),
    }
}

/// Python-style list literal, as the reflection prompts show token lists.
pub fn python_list(items: &[String]) -> String {
    let quoted: Vec<String> = items
        .iter()
        .map(|s| {
            if s.contains('\'') && !s.contains('"') {
                format!("\"{}\"", s.replace('\\', "\\\\"))
            } else {
                format!("'{}'", s.replace('\\', "\\\\").replace('\'', "\\'"))
            }
        })
        .collect();
    format!("[{}]", quoted.join(", "))
}

/// `{"name": "...", "type": "..."}`
pub fn render_entity(name: &str, etype: &str) -> String {
    format!("{{\"name\": {}, \"type\": {}}}", quote(name), quote(etype))
}

/// `{"named entities": [...]}` for the given (name, type) pairs.
pub fn render_entity_list<'a>(entities: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let items: Vec<String> = entities.into_iter().map(|(n, t)| render_entity(n, t)).collect();
    format!("{{\"named entities\": [{}]}}", items.join(", "))
}

pub fn render_gold(sentence: &AnnotatedSentence) -> String {
    render_entity_list(sentence.mentions.iter().map(|m| (m.surface.as_str(), m.etype.as_str())))
}

/// Extraction prompt: instructions, then the demonstrations in the given
/// order, then the query with an open `Output: ` slot.
pub fn build_icl_prompt(
    desc: &TaskDescription,
    demos: &[&AnnotatedSentence],
    query: &AnnotatedSentence,
) -> String {
    let n = desc.types.len();
    let mut out = fill(
        ICL_TEMPLATE,
        &[
            ("count", &number_word(n)),
            ("type_word", if n == 1 { "type" } else { "types" }),
            ("types", &desc.icl_type_list()),
        ],
    );
    for d in demos {
        out.push_str("\n\nInput: ");
        out.push_str(&d.text());
        out.push_str("\nOutput: ");
        out.push_str(&render_gold(d));
    }
    out.push_str("\n\nInput: ");
    out.push_str(&query.text());
    out.push_str("\nOutput: ");
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReflectionKind {
    Unseen,
    FalseNegative,
    Boundary,
}

impl ReflectionKind {
    pub const ALL: [ReflectionKind; 3] = [
        ReflectionKind::Unseen,
        ReflectionKind::FalseNegative,
        ReflectionKind::Boundary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReflectionKind::Unseen => "unseen",
            ReflectionKind::FalseNegative => "false-negative",
            ReflectionKind::Boundary => "boundary",
        }
    }
}

/// A neighbor of an unseen candidate with the entity spans it flanks in training.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEvidence {
    pub token: String,
    pub examples: Vec<SpanRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnseenCandidate {
    pub token: String,
    pub contexts: Vec<ContextEvidence>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FnCandidate {
    pub token: String,
    pub counts: TokenCategoryCounts,
    pub demos: SpanDemos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryStatus {
    Inside,
    Outside,
}

impl BoundaryStatus {
    pub fn label(self) -> &'static str {
        match self {
            BoundaryStatus::Inside => "part of the entity",
            BoundaryStatus::Outside => "adjacent context",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTokenPayload {
    pub token: String,
    pub status: BoundaryStatus,
    pub counts: TokenCategoryCounts,
    pub demos: SpanDemos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPayload {
    pub name: String,
    pub etype: String,
    pub tokens: Vec<BoundaryTokenPayload>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReflectionPayload {
    Unseen(Vec<UnseenCandidate>),
    FalseNegative(Vec<FnCandidate>),
    Boundary(BoundaryPayload),
}

impl ReflectionPayload {
    pub fn kind(&self) -> ReflectionKind {
        match self {
            ReflectionPayload::Unseen(_) => ReflectionKind::Unseen,
            ReflectionPayload::FalseNegative(_) => ReflectionKind::FalseNegative,
            ReflectionPayload::Boundary(_) => ReflectionKind::Boundary,
        }
    }
}

/// `Input: ...\nOutput: ...`; other spans carry no label and show `{}`.
pub fn render_span_example(rec: &SpanRecord) -> String {
    let output = match (&rec.label, rec.kind) {
        (Some(m), SpanKind::Entity | SpanKind::Context) => render_entity(&m.surface, &m.etype),
        _ => "{}".to_string(),
    };
    format!("Input: {}\nOutput: {}", rec.rendered, output)
}

fn render_examples(recs: &[SpanRecord]) -> String {
    recs.iter().map(render_span_example).collect::<Vec<_>>().join("\n\n")
}

fn render_demo_sections(demos: &SpanDemos, negative_header: &str) -> String {
    format!(
        "<examples>\nPositive Examples (part of entity):\n{}\n\nHard Negative Examples (context tokens):\n{}\n\n{}\n{}\n</examples>",
        render_examples(&demos.positives),
        render_examples(&demos.hard_negatives),
        negative_header,
        render_examples(&demos.negatives),
    )
}

fn unseen_block(c: &UnseenCandidate) -> String {
    let names: Vec<String> = c.contexts.iter().map(|e| e.token.clone()).collect();
    let mut out = format!(
        "<candidate_token>\n{}\n</candidate_token>\n<potential_context_tokens_around>\n{}\n</potential_context_tokens_around>",
        c.token,
        python_list(&names)
    );
    for e in &c.contexts {
        out.push_str(&format!(
            "\n<context_token>\n{}\n</context_token>\n<examples>\n{}\n</examples>",
            e.token,
            render_examples(&e.examples)
        ));
    }
    out
}

fn fn_block(c: &FnCandidate) -> String {
    format!(
        "<candidate_token>\n{}\n</candidate_token>\n<token_stat>\n{}\n</token_stat>\n{}",
        c.token,
        c.counts.token_stat_block(),
        render_demo_sections(&c.demos, "Negative Examples (other tokens, not entity nor context):")
    )
}

fn boundary_block(t: &BoundaryTokenPayload) -> String {
    format!(
        "<boundary_token>\n{}\n</boundary_token>\n<status>\n{}\n</status>\n<token_stat>\n{}\n</token_stat>\n{}",
        t.token,
        t.status.label(),
        t.counts.token_stat_block(),
        render_demo_sections(&t.demos, "Negative Examples (regular tokens, neither entity nor context):")
    )
}

pub fn build_reflection_prompt(
    desc: &TaskDescription,
    query: &AnnotatedSentence,
    payload: &ReflectionPayload,
) -> String {
    let input_text = query.text();
    match payload {
        ReflectionPayload::Unseen(cands) => {
            let tokens: Vec<String> = cands.iter().map(|c| c.token.clone()).collect();
            let blocks: Vec<String> = cands.iter().map(unseen_block).collect();
            fill(
                UNSEEN_TEMPLATE,
                &[
                    ("input_text", &input_text),
                    ("candidate_tokens", &python_list(&tokens)),
                    ("candidates", &blocks.join("\n\n")),
                    ("source", &desc.source_gloss),
                    ("type_choice", &desc.type_choice()),
                ],
            )
        }
        ReflectionPayload::FalseNegative(cands) => {
            let tokens: Vec<String> = cands.iter().map(|c| c.token.clone()).collect();
            let blocks: Vec<String> = cands.iter().map(fn_block).collect();
            fill(
                FN_TEMPLATE,
                &[
                    ("input_text", &input_text),
                    ("candidate_tokens", &python_list(&tokens)),
                    ("candidates", &blocks.join("\n\n")),
                    ("type_choice", &desc.type_choice()),
                ],
            )
        }
        ReflectionPayload::Boundary(b) => {
            let tokens: Vec<String> = b.tokens.iter().map(|t| t.token.clone()).collect();
            let blocks: Vec<String> = b.tokens.iter().map(boundary_block).collect();
            fill(
                BOUNDARY_TEMPLATE,
                &[
                    ("input_text", &input_text),
                    ("predicted_entity", &render_entity(&b.name, &b.etype)),
                    ("boundary_tokens", &python_list(&tokens)),
                    ("blocks", &blocks.join("\n\n")),
                ],
            )
        }
    }
}
