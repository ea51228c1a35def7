use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use vcprof::corpus::Split;
use vcprof::pipeline::{ContextKind, Pipeline, RunConfig};
use vcprof::retrieval::QueryStrategy;
use vcprof::synth::{self, SynthParams};

#[derive(Parser)]
#[command(name = "vcprof", version, about = "Context-aware user profiling for view-change prediction")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "vcprof.toml")]
    config: PathBuf,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-instance parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Log level filter, e.g. `info` or `vcprof=debug`.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Profiler,
    Querygen,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ContextArg {
    Profile,
    History,
    None,
}

impl From<ContextArg> for ContextKind {
    fn from(c: ContextArg) -> Self {
        match c {
            ContextArg::Profile => ContextKind::Profile,
            ContextArg::History => ContextKind::History,
            ContextArg::None => ContextKind::None,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Read threads and histories, filter ineligible instances.
    Ingest,
    /// Assign instances to train/validation/test.
    Split,
    /// Build each instance's candidate record pool.
    Pool,
    /// Embed pooled records.
    Index,
    /// Score record-level persuasion utility.
    ScoreRecords {
        #[arg(long = "split", value_enum, default_values = ["train", "validation"])]
        splits: Vec<SplitArg>,
    },
    /// Build a preference dataset.
    BuildPrefs {
        #[arg(long, value_enum)]
        kind: Kind,
    },
    /// Profiler preferences, utility scoring and query preferences in order.
    BuildTrainingData,
    /// Compare query strategies against record utility.
    EvalRetrieval {
        #[arg(long, value_enum, default_value = "validation")]
        split: SplitArg,
    },
    /// Retrieve, profile and predict.
    EvalE2e {
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Defaults to the configured context.
        #[arg(long, value_enum)]
        context: Option<ContextArg>,
        /// Defaults to the configured strategy.
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Collect results into report.json and CSV tables.
    Report {
        /// utility.jsonl files from different predictors to compare.
        #[arg(long, num_args = 1..)]
        agreement: Vec<PathBuf>,
    },
    /// Write a synthetic oracle world and a matching config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        users: usize,
        #[arg(long, default_value_t = 50)]
        records: usize,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_new(&cli.log).unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();

    if let Command::Synth { out, users, records } = &cli.command {
        let seed = cli.seed.unwrap_or(42);
        let params = SynthParams { users: *users, records_per_user: *records, ..SynthParams::default() };
        let world = synth::generate(&params, seed);
        world.write(out).with_context(|| format!("writing synthetic world to {}", out.display()))?;
        std::fs::write(out.join("vcprof.toml"), synth::sample_config(seed))?;
        println!("{}", out.join("vcprof.toml").display());
        return Ok(());
    }

    let mut cfg = RunConfig::load(&cli.config).with_context(|| format!("loading {}", cli.config.display()))?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    let pipeline = Pipeline::new(cfg)?;

    match cli.command {
        Command::Ingest => {
            let c = pipeline.ingest()?;
            println!("{} instances", c.len());
        }
        Command::Split => {
            let s = pipeline.split()?;
            println!(
                "train {} validation {} test {}",
                s.count(Split::Train),
                s.count(Split::Validation),
                s.count(Split::Test)
            );
        }
        Command::Pool => {
            let rows = pipeline.build_pools()?;
            println!("{} pools", rows.len());
        }
        Command::Index => {
            let store = pipeline.index()?;
            println!("{} vectors of dimension {}", store.len(), store.dimension());
        }
        Command::ScoreRecords { splits } => {
            let splits: Vec<Split> = splits.into_iter().map(Split::from).collect();
            let tables = pipeline.score_records(&splits)?;
            println!("{} instances scored", tables.len());
        }
        Command::BuildPrefs { kind } => {
            let entry = match kind {
                Kind::Profiler => pipeline.build_profiler_prefs()?,
                Kind::Querygen => pipeline.build_query_prefs()?,
            };
            println!("{} pairs over {} instances -> {}", entry.count, entry.instances, entry.file);
        }
        Command::BuildTrainingData => {
            let s = pipeline.build_training_data()?;
            println!(
                "profiler pairs {}, utility instances {}, querygen pairs {}",
                s.profiler.count, s.utility_instances, s.querygen.count
            );
        }
        Command::EvalRetrieval { split } => {
            let report = pipeline.eval_retrieval(split.into())?;
            for r in report.retrieval {
                println!("{:<14} NCG@k {:.4}  NDCG@k {:.4}", r.strategy, r.mean_ncg_at_5, r.mean_ndcg_at_5);
            }
        }
        Command::EvalE2e { split, context, strategy } => {
            let cfg = pipeline.config();
            let context = context.map(ContextKind::from).unwrap_or(cfg.inference.context);
            let strategy = match strategy {
                Some(s) => QueryStrategy::parse(&s, cfg.seed)?,
                None => cfg.strategy()?,
            };
            let o = pipeline.eval_e2e(split.into(), context, strategy)?;
            println!(
                "{}: F1 {:.4} macro-F1 {:.4} over {} comments, {} failed instances",
                o.tag,
                o.row.f1_positive,
                o.row.f1_macro,
                o.row.n,
                o.failed_instances.len()
            );
        }
        Command::Report { agreement } => {
            if agreement.len() == 1 {
                bail!("--agreement needs at least two utility files");
            }
            let r = pipeline.report(&agreement)?;
            println!(
                "{} retrieval rows, {} end-to-end rows, {} agreement rows",
                r.retrieval.len(),
                r.end_to_end.len(),
                r.agreement.len()
            );
        }
        Command::Synth { .. } => unreachable!("handled above"),
    }
    Ok(())
}
