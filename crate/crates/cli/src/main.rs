use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use labelstat::pipeline::Variant;
use labelstat::retriever::RetrieverKind;
use labelstat_cli::{cmd_embed_cache, cmd_eval, cmd_report, cmd_run, cmd_stats, load_config, Overrides};

#[derive(Parser)]
#[command(name = "labelstat", version, about = "Label-statistics-guided NER with a chat model")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Icl,
    #[value(name = "icl+reflect")]
    IclReflect,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Kate,
    Bm25,
}

#[derive(Subcommand)]
enum Command {
    /// Build token statistics and span snapshots from the training split.
    Stats {
        #[arg(short, long)]
        config: PathBuf,
        /// Tokens to list, ranked by entity probability.
        #[arg(long, default_value_t = 20)]
        top_k: usize,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Embed every token and sentence the retrievers need into the cache file.
    EmbedCache {
        #[arg(short, long)]
        config: PathBuf,
        /// Also cache whole-sentence vectors for the KATE baseline.
        #[arg(long)]
        with_kate: bool,
        #[arg(long)]
        subsample: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run extraction (and reflection) over the test split.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Use a baseline retriever instead of the label-guided one.
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
        /// Demonstrations per prompt.
        #[arg(short = 'n', long)]
        n_demos: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Evaluate a seeded sample of this many test sentences.
        #[arg(long)]
        subsample: Option<usize>,
        /// Replay responses from this fixture instead of calling the endpoint.
        #[arg(long)]
        fixture: Option<PathBuf>,
        #[arg(long)]
        concurrency: Option<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Score a finished run against gold annotations.
    Eval {
        #[arg(short, long)]
        config: PathBuf,
        /// Defaults to manifest.json in the configured output directory.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Gold file in the dataset's format; defaults to the test split.
        #[arg(long)]
        gold: Option<PathBuf>,
    },
    /// Print a saved evaluation report.
    Report {
        /// eval.json written by the eval command.
        eval: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn run(cli: Cli) -> labelstat::Result<()> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Stats {
            config,
            top_k,
            output_dir,
        } => {
            let cfg = load_config(&config, &Overrides {
                output_dir,
                ..Overrides::default()
            })?;
            cmd_stats(&cfg, top_k, &mut stdout).map(|_| ())
        }
        Command::EmbedCache {
            config,
            with_kate,
            subsample,
            seed,
        } => {
            let cfg = load_config(&config, &Overrides {
                subsample,
                seed,
                ..Overrides::default()
            })?;
            let mut kinds = vec![cfg.run.retriever];
            if with_kate && !kinds.contains(&RetrieverKind::Kate) {
                kinds.push(RetrieverKind::Kate);
            }
            cmd_embed_cache(&cfg, &kinds, &mut stdout)
        }
        Command::Run {
            config,
            variant,
            baseline,
            n_demos,
            seed,
            subsample,
            fixture,
            concurrency,
            output_dir,
        } => {
            let overrides = Overrides {
                variant: variant.map(|v| match v {
                    VariantArg::Icl => Variant::Icl,
                    VariantArg::IclReflect => Variant::IclReflect,
                }),
                baseline: baseline.map(|b| match b {
                    Baseline::Kate => RetrieverKind::Kate,
                    Baseline::Bm25 => RetrieverKind::Bm25,
                }),
                n_demos,
                seed,
                subsample,
                fixture,
                concurrency,
                output_dir,
            };
            let cfg = load_config(&config, &overrides)?;
            cmd_run(&cfg, &mut stdout).map(|_| ())
        }
        Command::Eval { config, manifest, gold } => {
            let cfg = load_config(&config, &Overrides::default())?;
            let manifest = manifest.unwrap_or_else(|| labelstat::experiment::manifest_path(&cfg));
            cmd_eval(&cfg, &manifest, gold.as_deref(), &mut stdout).map(|_| ())
        }
        Command::Report { eval, json } => cmd_report(&eval, json, &mut stdout),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
