//! Subcommand implementations behind the `labelstat` binary.
//!
//! Each command takes a loaded config and writes human-readable output to a
//! writer, so the commands can be driven from tests without a subprocess.

use std::io::Write;
use std::path::{Path, PathBuf};

use labelstat::config::{BackendMode, RunConfig};
use labelstat::error::{Error, Result};
use labelstat::experiment::{load_dataset, load_split, load_train, manifest_path, run_experiment, warm_embedding_cache};
use labelstat::llm::usage_report;
use labelstat::pipeline::{RunManifest, Variant};
use labelstat::report::{evaluate_run, gold_for_manifest, EvalReport};
use labelstat::retriever::RetrieverKind;
use labelstat::stats::{SpanIndex, TokenStats};

pub const STATS_FILE: &str = "token_stats.jsonl";
pub const SPANS_FILE: &str = "spans.jsonl";
pub const EVAL_FILE: &str = "eval.json";

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub variant: Option<Variant>,
    pub baseline: Option<RetrieverKind>,
    pub n_demos: Option<usize>,
    pub seed: Option<u64>,
    pub subsample: Option<usize>,
    /// Replay fixture; switches an http backend to replay mode.
    pub fixture: Option<PathBuf>,
    pub concurrency: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.variant {
            cfg.run.variant = v;
        }
        if let Some(b) = self.baseline {
            cfg.run.retriever = b;
        }
        if let Some(n) = self.n_demos {
            cfg.retrieval.n_demos = n;
        }
        if let Some(s) = self.seed {
            cfg.run.seed = s;
        }
        if let Some(n) = self.subsample {
            cfg.run.subsample = Some(n);
        }
        if let Some(p) = &self.fixture {
            cfg.backend.fixture = Some(p.clone());
            if cfg.backend.mode != BackendMode::Record {
                cfg.backend.mode = BackendMode::Replay;
            }
        }
        if let Some(c) = self.concurrency {
            cfg.backend.concurrency = c;
        }
        if let Some(d) = &self.output_dir {
            cfg.run.output_dir = d.clone();
        }
    }
}

/// Loads a config file and applies environment and command-line overrides.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    cfg.apply_env_overrides();
    overrides.apply(&mut cfg);
    Ok(cfg)
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Builds token statistics and the span index from the training split,
/// writes both snapshots to the output directory, and prints the tokens most
/// often labelled as entities. Returns the statistics snapshot path.
pub fn cmd_stats(cfg: &RunConfig, top_k: usize, out: &mut dyn Write) -> Result<PathBuf> {
    let (train, _) = load_train(cfg)?;
    let stats = TokenStats::build(&train, &cfg.stats);
    let index = SpanIndex::build(&train, &cfg.stats);
    let stats_path = cfg.run.output_dir.join(STATS_FILE);
    write_file(&stats_path, stats.to_snapshot().as_bytes())?;
    write_file(&cfg.run.output_dir.join(SPANS_FILE), index.to_snapshot().as_bytes())?;

    let counts = index.counts();
    writeln!(
        out,
        "{} sentences, {} distinct tokens, {} occurrences; spans: {}",
        train.len(),
        stats.vocabulary_len(),
        stats.total_occurrences(),
        counts
            .iter()
            .map(|(k, n)| format!("{n} {}", format!("{k:?}").to_lowercase()))
            .collect::<Vec<_>>()
            .join(", ")
    )
    .map_err(io_err)?;
    writeln!(out, "{:<24} {:>8} {:>8} {:>8} {:>8}", "token", "P(ent)", "entity", "context", "other").map_err(io_err)?;
    for (token, c) in stats.top_entity_tokens(top_k) {
        writeln!(
            out,
            "{:<24} {:>8.4} {:>8} {:>8} {:>8}",
            token,
            c.p_entity(),
            c.entity,
            c.context,
            c.other
        )
        .map_err(io_err)?;
    }
    writeln!(out, "wrote {}", stats_path.display()).map_err(io_err)?;
    Ok(stats_path)
}

/// Embeds every text the listed retrievers need into the configured cache.
pub fn cmd_embed_cache(cfg: &RunConfig, kinds: &[RetrieverKind], out: &mut dyn Write) -> Result<()> {
    let (requested, cached) = warm_embedding_cache(cfg, kinds)?;
    writeln!(out, "{requested} texts embedded; cache now holds {cached} vectors").map_err(io_err)
}

/// Runs the pipeline and prints a short summary.
pub fn cmd_run(cfg: &RunConfig, out: &mut dyn Write) -> Result<RunManifest> {
    let manifest = run_experiment(cfg)?;
    let mentions: usize = manifest.records.iter().map(|r| r.state.mentions.len()).sum();
    writeln!(
        out,
        "{} sentences, {} predicted mentions; manifest {}",
        manifest.records.len(),
        mentions,
        manifest_path(cfg).display()
    )
    .map_err(io_err)?;
    write!(out, "{}", usage_report(&manifest.usage, &cfg.backend.prices).render_table()).map_err(io_err)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// Scores a run. Gold comes from the config's test split unless `gold` names
/// another file in the same format. The manifest is only read; the report is
/// written next to it as `eval.json`.
pub fn cmd_eval(cfg: &RunConfig, manifest: &Path, gold: Option<&Path>, out: &mut dyn Write) -> Result<EvalReport> {
    let m = read_manifest(manifest)?;
    let (train, test) = match gold {
        Some(p) => {
            let (train, _) = load_train(cfg)?;
            let (gold, _) = load_split(cfg, p, "test")?;
            (train, gold)
        }
        None => {
            let (ds, _) = load_dataset(cfg)?;
            (ds.train, ds.test)
        }
    };
    if m.config_hash != cfg.config_hash() {
        log::warn!("manifest was produced under a different configuration");
    }
    let gold = gold_for_manifest(&m, &test)?;
    let report = evaluate_run(&m, &gold, &train, &cfg.backend.prices, &cfg.eval, cfg.run.seed)?;
    let dir = manifest.parent().unwrap_or(Path::new("."));
    write_file(&dir.join(EVAL_FILE), &serde_json::to_vec_pretty(&report)?)?;
    write!(out, "{}", report.render_text()).map_err(io_err)?;
    Ok(report)
}

/// Renders a saved evaluation report as text or JSON.
pub fn cmd_report(eval_path: &Path, json: bool, out: &mut dyn Write) -> Result<()> {
    let text = std::fs::read_to_string(eval_path).map_err(|e| Error::Io {
        path: eval_path.to_path_buf(),
        source: e,
    })?;
    let report: EvalReport = serde_json::from_str(&text)?;
    let problems = report.reconciliation_problems();
    if !problems.is_empty() {
        return Err(Error::Data(format!("report does not reconcile: {}", problems.join("; "))));
    }
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?).map_err(io_err)
    } else {
        write!(out, "{}", report.render_text()).map_err(io_err)
    }
}
