use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::stats::{ContextKey, SpanIndex, SpanKind, SpanRecord};

/// Which side of a mention a context token sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpanDemoQuery {
    /// Entity spans flanked by `token` on `side`. Spans that also carry one
    /// of `opposite` on the other side rank first.
    ContextMatch {
        token: String,
        side: Side,
        opposite: Vec<String>,
        m: usize,
    },
    /// Entity spans whose mention contains `token` (positives), context spans
    /// anchored on it (hard negatives) and other spans anchored on it (negatives).
    TokenContainment { token: String, m: usize },
    /// As `TokenContainment`, limited to the listed categories.
    CategorySample {
        token: String,
        kinds: Vec<SpanKind>,
        m: usize,
    },
}

/// Span demonstrations grouped by role. Context-match results land in `positives`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpanDemos {
    pub positives: Vec<SpanRecord>,
    pub hard_negatives: Vec<SpanRecord>,
    pub negatives: Vec<SpanRecord>,
}

impl SpanDemos {
    pub fn len(&self) -> usize {
        self.positives.len() + self.hard_negatives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

type GroupKey = (String, Option<(String, String)>);

fn group_key(r: &SpanRecord) -> GroupKey {
    (
        r.rendered.clone(),
        r.label.as_ref().map(|m| (m.surface.clone(), m.etype.clone())),
    )
}

/// Up to `m` distinct (rendering, label) examples, most frequent first, then
/// by sentence id and window start of their earliest occurrence.
fn select<'a>(records: impl IntoIterator<Item = &'a Arc<SpanRecord>>, m: usize, skip: &BTreeSet<GroupKey>) -> Vec<SpanRecord> {
    let mut groups: HashMap<GroupKey, (usize, &'a SpanRecord)> = HashMap::new();
    for r in records {
        let key = group_key(r);
        if skip.contains(&key) {
            continue;
        }
        let e = groups.entry(key).or_insert((0, r));
        e.0 += 1;
        if (&r.sentence_id, r.window_start) < (&e.1.sentence_id, e.1.window_start) {
            e.1 = r;
        }
    }
    let mut ranked: Vec<(usize, &SpanRecord)> = groups.into_values().collect();
    ranked.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then_with(|| a.1.sentence_id.cmp(&b.1.sentence_id))
            .then_with(|| a.1.window_start.cmp(&b.1.window_start))
            .then_with(|| a.1.rendered.cmp(&b.1.rendered))
    });
    ranked.into_iter().take(m).map(|(_, r)| r.clone()).collect()
}

pub fn retrieve_span_demos(q: &SpanDemoQuery, index: &SpanIndex) -> SpanDemos {
    match q {
        SpanDemoQuery::ContextMatch { token, side, opposite, m } => {
            let mut two_sided: Vec<&Arc<SpanRecord>> = Vec::new();
            for o in opposite {
                let key = match side {
                    Side::Left => ContextKey::Pair(token.clone(), o.clone()),
                    Side::Right => ContextKey::Pair(o.clone(), token.clone()),
                };
                two_sided.extend(index.by_context(&key));
            }
            let mut picked = select(two_sided, *m, &BTreeSet::new());
            if picked.len() < *m {
                let taken: BTreeSet<GroupKey> = picked.iter().map(group_key).collect();
                let key = match side {
                    Side::Left => ContextKey::Left(token.clone()),
                    Side::Right => ContextKey::Right(token.clone()),
                };
                picked.extend(select(index.by_context(&key), *m - picked.len(), &taken));
            }
            SpanDemos {
                positives: picked,
                ..SpanDemos::default()
            }
        }
        SpanDemoQuery::TokenContainment { token, m } => sample(index, token, &[SpanKind::Entity, SpanKind::Context, SpanKind::Other], *m),
        SpanDemoQuery::CategorySample { token, kinds, m } => sample(index, token, kinds, *m),
    }
}

fn sample(index: &SpanIndex, token: &str, kinds: &[SpanKind], m: usize) -> SpanDemos {
    let none = BTreeSet::new();
    let pick = |k: SpanKind| {
        if kinds.contains(&k) {
            select(index.spans(k, token), m, &none)
        } else {
            Vec::new()
        }
    };
    SpanDemos {
        positives: pick(SpanKind::Entity),
        hard_negatives: pick(SpanKind::Context),
        negatives: pick(SpanKind::Other),
    }
}
