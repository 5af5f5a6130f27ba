//! Command-line front end: argument parsing, config resolution, and JSON
//! output plumbing for the four subcommands.
//!
//! Errors leave the process with exit code 1 and a single JSON line on
//! stderr: `{"error": <code>, "message": <text>}`.

pub mod bench;
pub mod checkpoint;
pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::data::Split;
use crate::error::Result;
use crate::star::PoolingKind;

use self::bench::BenchOptions;
use self::config::RunConfig;

fn parse_pooling(s: &str) -> Result<PoolingKind> {
    s.parse()
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse()
}

#[derive(Parser, Debug)]
#[command(
    name = "softs",
    version,
    about = "Multivariate time-series forecasting with a channel-pooling MLP core"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model, write a checkpoint and epoch history, report metrics.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a dataset.
    Evaluate(EvaluateArgs),
    /// Predict the next horizon from the last lookback window of a CSV.
    Forecast(ForecastArgs),
    /// Time training-shaped passes across channel counts and fit the trend.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV: header starts with `date`, one column per channel.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output path (checkpoint for train, report for the others).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for init, shuffling, and stochastic pooling.
    #[arg(long)]
    seed: Option<u64>,
    /// Input window length L.
    #[arg(long)]
    lookback: Option<usize>,
    /// Forecast length H.
    #[arg(long)]
    horizon: Option<usize>,
    /// Channel count; inferred from the dataset when omitted.
    #[arg(long)]
    channels: Option<usize>,
    /// Embedding width d.
    #[arg(long)]
    hidden: Option<usize>,
    /// Core vector width d'.
    #[arg(long)]
    core: Option<usize>,
    /// Number of channel-pooling blocks N.
    #[arg(long)]
    layers: Option<usize>,
    /// mean, max, weighted, or stochastic.
    #[arg(long, value_parser = parse_pooling)]
    pooling: Option<PoolingKind>,
    /// Disable reversible instance normalization.
    #[arg(long)]
    no_revin: bool,
    /// Replace each block's channel pooling with a plain per-channel MLP.
    #[arg(long)]
    baseline: bool,
    /// Initial learning rate of the cosine schedule.
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Epochs without validation improvement before stopping early.
    #[arg(long)]
    patience: Option<usize>,
}

impl CommonArgs {
    /// File config first, then every set flag on top.
    fn to_run_config(&self) -> Result<RunConfig> {
        let flags = RunConfig {
            data: self.data.clone(),
            out: self.out.clone(),
            split: None,
            lookback: self.lookback,
            horizon: self.horizon,
            channels: self.channels,
            hidden: self.hidden,
            core: self.core,
            layers: self.layers,
            pooling: self.pooling,
            use_revin: if self.no_revin { Some(false) } else { None },
            baseline: if self.baseline { Some(true) } else { None },
            seed: self.seed,
            lr0: self.lr0,
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
        };
        let base = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        Ok(base.overlay(flags))
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trained model file.
    #[arg(long)]
    checkpoint: PathBuf,
    /// train, val, or test.
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
}

#[derive(Args, Debug)]
struct ForecastArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trained model file.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Forecast from the last lookback window (the only input mode).
    #[arg(long)]
    last_window: bool,
    /// Emit predictions in the dataset's original units (the default).
    #[arg(long)]
    raw_units: bool,
    /// Keep predictions in standardized space instead.
    #[arg(long, conflicts_with = "raw_units")]
    standardized: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Comma-separated ascending channel counts, at least 3.
    #[arg(long, value_delimiter = ',')]
    channels: Option<Vec<usize>>,
    /// Timed passes per channel count; the median is reported.
    #[arg(long, default_value_t = 3)]
    repeat: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses arguments, runs the chosen subcommand, and maps any error to exit
/// code 1 with a JSON line on stderr.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let line = serde_json::json!({ "error": err.code(), "message": err.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => {
            let cfg = args.common.to_run_config()?;
            let summary = commands::cmd_train(&cfg)?;
            println!("{}", pretty(&summary)?);
            Ok(())
        }
        Command::Evaluate(args) => {
            let cfg = args.common.to_run_config()?;
            let report = commands::cmd_evaluate(&cfg, &args.checkpoint, args.split)?;
            emit_json(&report, cfg.out.as_deref())
        }
        Command::Forecast(args) => {
            let cfg = args.common.to_run_config()?;
            // Raw units are the default; both flags exist so either choice
            // can be spelled out.
            let _ = args.last_window;
            let _ = args.raw_units;
            let csv_text = commands::cmd_forecast(&cfg, &args.checkpoint, args.standardized)?;
            match cfg.out.as_deref() {
                Some(path) => checkpoint::write_atomic(path, csv_text.as_bytes()),
                None => {
                    print!("{csv_text}");
                    Ok(())
                }
            }
        }
        Command::Bench(args) => {
            let mut opts = BenchOptions::default();
            if let Some(channels) = args.channels {
                opts.channels = channels;
            }
            opts.repeats = args.repeat;
            if let Some(seed) = args.seed {
                opts.seed = seed;
            }
            let report = bench::run_bench(&opts)?;
            let value = serde_json::to_value(&report)
                .map_err(|e| crate::SoftsError::config(format!("bench serialization: {e}")))?;
            emit_json(&value, args.out.as_deref())
        }
    }
}

fn pretty(value: &serde_json::Value) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map_err(|e| crate::SoftsError::config(format!("report serialization: {e}")))
}

fn emit_json(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = pretty(value)?;
    match out {
        Some(path) => {
            let mut bytes = text.into_bytes();
            bytes.push(b'\n');
            checkpoint::write_atomic(path, &bytes)
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}
