//! Scoring a finished run and rendering the result.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::EvalSettings;
use crate::corpus::AnnotatedSentence;
use crate::error::{Error, Result};
use crate::eval::{
    bootstrap_ci, classify_errors, pair_up, retriever_sanity, seen_unseen_breakdown, strict_f1, BootstrapCi,
    ErrorBreakdown, EvalResult, Novelty, RetrieverSanity, SeenUnseenBreakdown, TrainingIndex,
};
use crate::llm::{usage_report, CostReport, Phase, Prices};
use crate::pipeline::{RunManifest, Variant};
use crate::prompt::ReflectionKind;
use crate::reflect::{reflection_report, ReflectionReport};
use crate::retriever::RetrieverKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub manifest_hash: String,
    pub config_hash: String,
    pub model_id: String,
    pub variant: Variant,
    pub retriever: RetrieverKind,
    pub sentences: usize,
    pub overall: EvalResult,
    pub errors: ErrorBreakdown,
    pub seen_unseen: SeenUnseenBreakdown,
    pub retriever_sanity: RetrieverSanity,
    pub reflection: ReflectionReport,
    pub cost: CostReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapCi>,
    /// Extraction replies without a usable entity list.
    pub icl_parse_failures: usize,
    /// Extracted names that matched no span of their sentence.
    pub unaligned_names: usize,
}

/// Gold sentences for the manifest's queries, in query order.
pub fn gold_for_manifest(manifest: &RunManifest, gold: &[AnnotatedSentence]) -> Result<Vec<AnnotatedSentence>> {
    let by_id: HashMap<&str, &AnnotatedSentence> = gold.iter().map(|s| (s.id.as_str(), s)).collect();
    manifest
        .query_ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|s| (*s).clone())
                .ok_or_else(|| Error::Data(format!("gold has no sentence {id:?}")))
        })
        .collect()
}

/// Scores a complete run against `gold` (exactly the queried sentences) and
/// checks that every report reconciles.
pub fn evaluate_run(
    manifest: &RunManifest,
    gold: &[AnnotatedSentence],
    train: &[AnnotatedSentence],
    prices: &Prices,
    settings: &EvalSettings,
    seed: u64,
) -> Result<EvalReport> {
    if !manifest.complete {
        return Err(Error::Data(format!(
            "manifest is incomplete ({}); rerun before evaluating",
            manifest.error.as_deref().unwrap_or("no error recorded")
        )));
    }
    let sentences = pair_up(gold, &manifest.predictions())?;
    let overall = strict_f1(&sentences);
    let bootstrap = if settings.bootstrap_resamples > 0 && sentences.len() >= 2 {
        Some(bootstrap_ci(&sentences, settings.bootstrap_resamples, settings.confidence, seed)?)
    } else {
        None
    };
    let report = EvalReport {
        manifest_hash: manifest.content_hash(),
        config_hash: manifest.config_hash.clone(),
        model_id: manifest.model_id.clone(),
        variant: manifest.variant,
        retriever: manifest.retriever,
        sentences: sentences.len(),
        overall,
        errors: classify_errors(&sentences),
        seen_unseen: seen_unseen_breakdown(&sentences, &TrainingIndex::new(train)),
        retriever_sanity: retriever_sanity(gold, &manifest.retrieved(), train),
        reflection: reflection_report(manifest.states()),
        cost: usage_report(&manifest.usage, prices),
        bootstrap,
        icl_parse_failures: manifest.records.iter().filter(|r| r.icl_parse_failure.is_some()).count(),
        unaligned_names: manifest.records.iter().map(|r| r.unaligned_names).sum(),
    };
    let problems = report.reconciliation_problems();
    if !problems.is_empty() {
        return Err(Error::Data(format!("reports do not reconcile: {}", problems.join("; "))));
    }
    Ok(report)
}

impl EvalReport {
    /// Cross-checks between the sections; empty when everything adds up.
    pub fn reconciliation_problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let o = &self.overall;
        if !self.errors.reconciles(o) {
            out.push(format!(
                "error buckets sum to {} FP / {} FN, expected {} / {}",
                self.errors.fp_total(),
                self.errors.fn_total(),
                o.false_positives,
                o.false_negatives
            ));
        }
        let b = &self.seen_unseen.buckets;
        let tp: u64 = b.values().map(|r| r.true_positives).sum();
        let fp: u64 = b.values().map(|r| r.false_positives).sum::<u64>() + self.seen_unseen.residual_fp;
        let fn_: u64 = b.values().map(|r| r.false_negatives).sum();
        if (tp, fp, fn_) != (o.true_positives, o.false_positives, o.false_negatives) {
            out.push(format!("seen/unseen buckets sum to {tp}/{fp}/{fn_} TP/FP/FN"));
        }
        if !self.reflection.reconciles() {
            out.push("a reflection stage has prompts without outcomes".into());
        }
        for (kind, phase) in [
            (ReflectionKind::Unseen, Phase::ReflectUnseen),
            (ReflectionKind::FalseNegative, Phase::ReflectFn),
            (ReflectionKind::Boundary, Phase::ReflectBoundary),
        ] {
            let prompts = self.reflection.stage(kind).prompts;
            let calls = self
                .cost
                .phases
                .iter()
                .find(|p| p.phase == phase)
                .map_or(0, |p| p.usage.calls);
            if prompts != calls {
                out.push(format!("{} stage logged {prompts} prompts but the ledger has {calls} calls", kind.as_str()));
            }
        }
        if !self.cost.reconciles() {
            out.push("cost phases do not sum to the totals".into());
        }
        out
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let o = &self.overall;
        let _ = writeln!(
            s,
            "run: model {}, variant {}, retriever {}, {} sentences",
            self.model_id,
            serde_json::to_value(self.variant).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            serde_json::to_value(self.retriever).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            self.sentences
        );
        let _ = writeln!(
            s,
            "\nstrict F1 {:.4}  precision {:.4}  recall {:.4}  (TP {} FP {} FN {})",
            o.f1, o.precision, o.recall, o.true_positives, o.false_positives, o.false_negatives
        );
        if let Some(ci) = &self.bootstrap {
            let _ = writeln!(
                s,
                "{:.0}% bootstrap interval [{:.4}, {:.4}], margin {:.4} ({} resamples, seed {})",
                ci.level * 100.0,
                ci.lower,
                ci.upper,
                ci.margin,
                ci.resamples,
                ci.seed
            );
        }
        if self.icl_parse_failures > 0 || self.unaligned_names > 0 {
            let _ = writeln!(
                s,
                "unparsable extraction replies: {}, unaligned names: {}",
                self.icl_parse_failures, self.unaligned_names
            );
        }

        let e = &self.errors;
        let _ = writeln!(s, "\nerrors");
        for (name, v) in [
            ("type", e.type_errors),
            ("paired boundary", e.paired),
            ("unique FP", e.unique_fp),
            ("unique FN", e.unique_fn),
            ("multi-span FP", e.multi_fp),
            ("multi-span FN", e.multi_fn),
        ] {
            let _ = writeln!(s, "  {name:<18} {v:>6}");
        }
        let _ = writeln!(
            s,
            "  multi-span groups: {} split, {} merge, {} tangled",
            e.multi_split, e.multi_merge, e.multi_tangled
        );

        let _ = writeln!(s, "\n{:<22} {:>6} {:>8} {:>8} {:>8}", "gold mentions", "count", "P", "R", "F1");
        for n in Novelty::ALL {
            let r = self.seen_unseen.buckets.get(&n).copied().unwrap_or_default();
            let c = self.seen_unseen.gold_counts.get(&n).copied().unwrap_or(0);
            let _ = writeln!(
                s,
                "{:<22} {:>6} {:>8.4} {:>8.4} {:>8.4}",
                n.as_str(),
                c,
                r.precision,
                r.recall,
                r.f1
            );
        }
        let _ = writeln!(s, "false positives overlapping no gold mention: {}", self.seen_unseen.residual_fp);

        let rs = &self.retriever_sanity;
        match rs.proportion {
            Some(p) => {
                let _ = writeln!(
                    s,
                    "\nseen gold mentions present in retrieved demonstrations: {}/{} ({:.2}%)",
                    rs.covered,
                    rs.eligible,
                    p * 100.0
                );
            }
            None => {
                let _ = writeln!(s, "\nno gold mention of the queries occurs in training");
            }
        }

        let _ = writeln!(
            s,
            "\nreflection ({} sentences reflected)\n{}",
            self.reflection.sentences_reflected,
            self.reflection.render_table()
        );
        let _ = write!(s, "cost\n{}", self.cost.render_table());
        s
    }
}
