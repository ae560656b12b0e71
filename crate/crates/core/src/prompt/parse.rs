use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ReflectionKind;
use crate::corpus::{AnnotatedSentence, EntityTypeSet, Mention};

const FINAL_MARKER: &str = "Final predicted entities for the input text (JSON format):";
const UPDATED_MARKER: &str = "Updated Predicted Entity (JSON format):";

/// A model reply that could not be interpreted. Carries the raw text.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("{reason}")]
pub struct ParseFailure {
    pub raw: String,
    pub reason: String,
}

impl ParseFailure {
    fn new(raw: &str, reason: impl Into<String>) -> Self {
        ParseFailure {
            raw: raw.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedEntity {
    pub name: String,
    pub etype: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedEntityList {
    pub entities: Vec<ParsedEntity>,
    /// Entities dropped because their type is not in the schema.
    pub dropped_unknown_type: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions<'a> {
    pub schema: &'a EntityTypeSet,
    /// Reject the whole reply on an unknown type instead of dropping the entity.
    pub strict_types: bool,
}

impl<'a> ParseOptions<'a> {
    pub fn new(schema: &'a EntityTypeSet) -> Self {
        ParseOptions {
            schema,
            strict_types: false,
        }
    }
}

/// Every JSON object embedded in `text`, by start offset, latest first.
fn objects_from_end(text: &str) -> impl Iterator<Item = Value> + '_ {
    text.char_indices()
        .rev()
        .filter(|&(_, c)| c == '{')
        .filter_map(move |(i, _)| {
            let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
            match stream.next() {
                Some(Ok(v @ Value::Object(_))) => Some(v),
                _ => None,
            }
        })
}

fn entity_array(v: &Value) -> Option<&Vec<Value>> {
    let obj = v.as_object()?;
    obj.get("named entities")
        .or_else(|| obj.get("named_entities"))?
        .as_array()
}

fn read_entity(v: &Value) -> Option<ParsedEntity> {
    let obj = v.as_object()?;
    let name = obj.get("name")?.as_str()?.trim();
    let etype = obj.get("type")?.as_str()?.trim();
    if name.is_empty() || etype.is_empty() {
        return None;
    }
    Some(ParsedEntity {
        name: name.to_string(),
        etype: etype.to_string(),
    })
}

fn check_type(raw: &str, e: ParsedEntity, opts: &ParseOptions, out: &mut ParsedEntityList) -> Result<(), ParseFailure> {
    if opts.schema.contains(&e.etype) {
        out.entities.push(e);
    } else if opts.strict_types {
        return Err(ParseFailure::new(raw, format!("unknown entity type {:?}", e.etype)));
    } else {
        log::warn!("dropping entity {:?} with unknown type {:?}", e.name, e.etype);
        out.dropped_unknown_type += 1;
    }
    Ok(())
}

/// Extracts the last object with a `"named entities"` (or `"named_entities"`)
/// array, ignoring any surrounding text.
pub fn parse_entity_output(text: &str, opts: &ParseOptions) -> Result<ParsedEntityList, ParseFailure> {
    let list = objects_from_end(text)
        .find(|v| entity_array(v).is_some())
        .ok_or_else(|| ParseFailure::new(text, "no entity list object found"))?;
    let mut out = ParsedEntityList::default();
    for item in entity_array(&list).expect("checked above") {
        match read_entity(item) {
            Some(e) => check_type(text, e, opts, &mut out)?,
            None => log::warn!("skipping malformed entity entry {item}"),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "update")]
pub enum ReflectionUpdate {
    /// Entities proposed by the unseen or false-negative pass.
    Entities { entities: Vec<ParsedEntity> },
    /// Boundary pass: the corrected entity.
    Replace { entity: ParsedEntity },
    /// Boundary pass: `{}`, drop the prediction.
    Remove,
}

fn after_marker<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    text.rfind(marker).map(|i| &text[i + marker.len()..])
}

pub fn parse_reflection_output(
    kind: ReflectionKind,
    text: &str,
    opts: &ParseOptions,
) -> Result<ReflectionUpdate, ParseFailure> {
    match kind {
        ReflectionKind::Unseen | ReflectionKind::FalseNegative => {
            let tail = after_marker(text, FINAL_MARKER)
                .ok_or_else(|| ParseFailure::new(text, "final entities marker missing"))?;
            let parsed = parse_entity_output(tail, opts).map_err(|f| ParseFailure::new(text, f.reason))?;
            Ok(ReflectionUpdate::Entities {
                entities: parsed.entities,
            })
        }
        ReflectionKind::Boundary => {
            let tail = after_marker(text, UPDATED_MARKER)
                .ok_or_else(|| ParseFailure::new(text, "updated entity marker missing"))?;
            let start = tail
                .find('{')
                .ok_or_else(|| ParseFailure::new(text, "no object after updated entity marker"))?;
            let value = serde_json::Deserializer::from_str(&tail[start..])
                .into_iter::<Value>()
                .next()
                .and_then(|r| r.ok())
                .ok_or_else(|| ParseFailure::new(text, "malformed updated entity"))?;
            let obj = value
                .as_object()
                .ok_or_else(|| ParseFailure::new(text, "updated entity is not an object"))?;
            if obj.is_empty() {
                return Ok(ReflectionUpdate::Remove);
            }
            let entity =
                read_entity(&value).ok_or_else(|| ParseFailure::new(text, "updated entity lacks name or type"))?;
            if !opts.schema.contains(&entity.etype) {
                return Err(ParseFailure::new(text, format!("unknown entity type {:?}", entity.etype)));
            }
            Ok(ReflectionUpdate::Replace { entity })
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignPolicy {
    /// Every occurrence of a name becomes a mention.
    #[default]
    All,
    /// Only the leftmost occurrence.
    FirstOnly,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Alignment {
    pub mentions: Vec<Mention>,
    /// Names with no token-aligned occurrence in the sentence.
    pub dropped: usize,
}

/// Maps (name, type) pairs onto token spans of `query`.
///
/// Names are split on whitespace and matched as contiguous token runs.
/// Conflicting claims go to the leftmost start, then the longer span, then
/// the entity listed first.
pub fn align_mentions(parsed: &[ParsedEntity], query: &AnnotatedSentence, policy: AlignPolicy) -> Alignment {
    let tokens = &query.tokens;
    let mut claims: Vec<(usize, usize, usize)> = Vec::new(); // (start, end, entity index)
    let mut dropped = 0;
    for (k, e) in parsed.iter().enumerate() {
        let name: Vec<&str> = e.name.split_whitespace().collect();
        if name.is_empty() || name.len() > tokens.len() {
            dropped += 1;
            continue;
        }
        let mut found = false;
        for s in 0..=tokens.len() - name.len() {
            if tokens[s..s + name.len()].iter().zip(&name).all(|(a, b)| a == b) {
                found = true;
                claims.push((s, s + name.len() - 1, k));
                if policy == AlignPolicy::FirstOnly {
                    break;
                }
            }
        }
        if !found {
            log::debug!("no token-aligned match for {:?}", e.name);
            dropped += 1;
        }
    }
    claims.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    let mut mentions: Vec<Mention> = Vec::new();
    for (s, e, k) in claims {
        if mentions.last().is_some_and(|m| m.end >= s) {
            continue;
        }
        mentions.push(Mention::new(tokens, s, e, parsed[k].etype.clone()));
    }
    Alignment { mentions, dropped }
}
