//! `reckit`: ingest, split, train, evaluate, tune and segment from one JSON
//! experiment config. Flags override config fields, which override defaults.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CliError, Context, DEFAULT_OUT};
use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "reckit", version, about = "Recommendation experiments from a JSON config")]
struct Cli {
    /// Experiment config (JSON). Relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Experiment seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Ratings file (user, item, rating, timestamp; tab-separated).
    #[arg(long)]
    ratings: Option<PathBuf>,
    /// Item catalog in MovieLens `u.item` layout.
    #[arg(long)]
    items: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Saved model to use instead of training one from the config.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a ratings file and write a normalized copy plus statistics.
    Ingest(DataArgs),
    /// Print descriptive statistics for a ratings file.
    Stats(DataArgs),
    /// Partition the data and write train/test(/validation) files.
    Split(DataArgs),
    /// Train the configured model and save it.
    Train(DataArgs),
    /// Score a model on the test partition.
    Evaluate(ModelArgs),
    /// Top-k items for one user.
    Recommend {
        #[command(flatten)]
        args: ModelArgs,
        /// Raw user id.
        #[arg(long)]
        user: u64,
        /// Number of items to list.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        k: u64,
        /// Keep items the user already rated in training.
        #[arg(long)]
        include_rated: bool,
    },
    /// Hyperparameter search over the configured grid or space.
    Tune(DataArgs),
    /// RFM scores, named segments and optional k-means clusters.
    Segment {
        /// Transactions CSV (customer_id,timestamp,amount).
        #[arg(long)]
        transactions: Option<PathBuf>,
        /// Reference time (epoch seconds or RFC 3339).
        #[arg(long)]
        reference: Option<String>,
    },
}

fn build_context(cli: &Cli) -> Result<Context, CliError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let data = match &cli.command {
        Command::Ingest(d) | Command::Stats(d) | Command::Split(d) | Command::Train(d) | Command::Tune(d) => Some(d),
        Command::Evaluate(m) | Command::Recommend { args: m, .. } => Some(&m.data),
        Command::Segment { transactions, reference } => {
            if let Some(t) = transactions {
                config.data.transactions = Some(t.clone());
            }
            if let Some(r) = reference {
                config.segmentation.reference_time = Some(r.clone());
            }
            None
        }
    };
    if let Some(d) = data {
        if let Some(r) = &d.ratings {
            config.data.ratings = Some(r.clone());
            config.data.train = None;
            config.data.test = None;
        }
        if let Some(i) = &d.items {
            config.data.items = Some(i.clone());
        }
    }
    config.validate()?;
    let seed = cli.seed.or(config.seed);
    let out = cli.out.clone().or_else(|| config.output.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    Ok(Context { config, seed, out })
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = build_context(cli)?;
    match &cli.command {
        Command::Ingest(_) => commands::ingest(&ctx),
        Command::Stats(_) => commands::stats(&ctx),
        Command::Split(_) => commands::split(&ctx),
        Command::Train(_) => commands::train(&ctx),
        Command::Evaluate(m) => commands::evaluate_cmd(&ctx, m.model.as_deref()),
        Command::Recommend { args, user, k, include_rated } => {
            commands::recommend_cmd(&ctx, args.model.as_deref(), *user, *k as usize, *include_rated)
        }
        Command::Tune(_) => commands::tune(&ctx),
        Command::Segment { .. } => commands::segment(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
