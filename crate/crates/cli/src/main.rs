//! `pcnn`: ingest, synthesize, train, evaluate and compare congestion
//! forecasters from the command line.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcnn_core::nn::Precision;
use pcnn_core::pcnn::TrainMode;

use config::{InputFormat, SweepGrid};

/// Bad invocation or configuration (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A check ran and failed (exit code 3).
#[derive(Debug)]
pub struct VerificationError(pub String);

impl std::fmt::Display for VerificationError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for VerificationError {}

#[derive(Parser, Debug)]
#[command(name = "pcnn", version, about = "Traffic congestion forecasting with folded-input CNNs")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// TOML run config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_precision)]
    pub precision: Option<Precision>,
    #[arg(long, global = true)]
    pub slot_minutes: Option<u32>,
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true, env = "PCNN_THREADS")]
    pub threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Args, Debug, Clone, Default)]
pub struct FoldArgs {
    /// Days of history `d`.
    #[arg(long)]
    pub history_days: Option<usize>,
    /// Half window `t`.
    #[arg(long)]
    pub half_window: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Turn passage or aggregated travel-time CSV into a congestion series CSV.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum)]
        format: Option<InputFormat>,
        /// Skip malformed rows instead of aborting.
        #[arg(long)]
        lenient: bool,
        #[arg(long)]
        max_gap_seconds: Option<i64>,
        /// Keep weekends.
        #[arg(long)]
        all_days: bool,
    },
    /// Write a synthetic benchmark series with its parameters.
    Generate {
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long)]
        segments: Option<usize>,
        #[arg(long)]
        days: Option<usize>,
        #[arg(long)]
        noise_sigma: Option<f64>,
    },
    /// Train the forecaster on the train split and report validation metrics.
    Train {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
        #[command(flatten)]
        fold: FoldArgs,
        /// Steps ahead `u`.
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        conv_layers: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<TrainMode>,
    },
    /// Forecast one slot and print it as JSON.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        series: PathBuf,
        /// Needed when the series file holds more than one segment.
        #[arg(long)]
        segment: Option<String>,
        /// Day index `m` within the series.
        #[arg(long)]
        day: usize,
        /// First slot not yet observed, `n`.
        #[arg(long)]
        slot: usize,
        /// Steps ahead; defaults to the model's.
        #[arg(long)]
        horizon: Option<usize>,
        #[command(flatten)]
        fold: FoldArgs,
    },
    /// Score a trained model on one split.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = commands::Split::Test)]
        split: commands::Split,
        #[arg(long)]
        horizon: Option<usize>,
        #[command(flatten)]
        fold: FoldArgs,
    },
    /// Run the forecaster and the baselines over several slot sizes.
    Compare {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
        /// Comma-separated labels, e.g. `PCNN,LR(2),knn`.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        slot_sizes: Option<Vec<u32>>,
    },
    /// Grid search over window sizes and conv depth by validation MAE.
    Sweep {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long, value_enum)]
        grid: Option<SweepGrid>,
    },
    /// Check backpropagation against central differences on random inputs.
    Gradcheck {
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        /// Check a random sample of parameters per layer.
        #[arg(long)]
        max_params_per_layer: Option<usize>,
        #[command(flatten)]
        fold: FoldArgs,
        #[arg(long)]
        conv_layers: Option<usize>,
        /// Also write the per-seed reports as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    s.parse().map_err(|e: pcnn_core::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<TrainMode, String> {
    match s {
        "per-segment" => Ok(TrainMode::PerSegment),
        "pooled" => Ok(TrainMode::Pooled),
        other => Err(format!("unknown mode {other:?} (per-segment or pooled)")),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<VerificationError>().is_some() {
        return 3;
    }
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<pcnn_core::Error>() {
        Some(pcnn_core::Error::Config(_) | pcnn_core::Error::Incompatible(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
