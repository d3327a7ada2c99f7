//! Command-line front end for `lsta-core`: training runs with CSV metrics
//! and binary checkpoints, checkpoint evaluation, gradient checking and
//! learning-curve export.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::{CliError, Result};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "lsta", about = "Train and inspect LSTA/LSTM/GRU sequence classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model, writing metrics.csv, model.ckpt and a summary to --out.
    Train(RunArgs),
    /// Evaluate a checkpoint on the configured test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = commands::GRADCHECK_SEED)]
        seed: u64,
        /// Double one analytic gradient block (should make the check fail).
        #[arg(long)]
        inject_fault: bool,
    },
    /// Export per-split accuracy and loss series from a metrics.csv.
    Curves {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Run settings. A `--config` file is applied first, then individual flags,
/// then `--set key=value` pairs in order.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// lstm, lsta, gru or bilstm
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub hidden: Option<String>,
    /// mnist, fashion or synth
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub data_dir: Option<String>,
    #[arg(long)]
    pub train_n: Option<String>,
    #[arg(long)]
    pub test_n: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub batch: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub workers: Option<String>,
    #[arg(long)]
    pub warm_start_as_lstm: bool,
    /// Record elapsed milliseconds in the wall_ms column.
    #[arg(long)]
    pub wall_clock: bool,
    #[arg(long)]
    pub out: Option<String>,
    /// Any config key, e.g. `--set synth_noise=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl RunArgs {
    pub fn to_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        let flags = [
            ("model", &self.model),
            ("hidden", &self.hidden),
            ("dataset", &self.dataset),
            ("data_dir", &self.data_dir),
            ("train_n", &self.train_n),
            ("test_n", &self.test_n),
            ("epochs", &self.epochs),
            ("batch", &self.batch),
            ("lr", &self.lr),
            ("seed", &self.seed),
            ("workers", &self.workers),
            ("out", &self.out),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if self.warm_start_as_lstm {
            cfg.warm_start_as_lstm = true;
        }
        if self.wall_clock {
            cfg.wall_clock = true;
        }
        for pair in &self.set {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| CliError::config("set", format!("expected KEY=VALUE, got `{pair}`")))?;
            cfg.set(key.trim(), value)?;
        }
        Ok(cfg)
    }
}

/// Executes a parsed command, writing its report to `out`; returns the
/// process exit status.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Train(args) => {
            let summary = commands::train(&args.to_config()?)?;
            writeln!(out, "{}", summary.summary_line())?;
            Ok(0)
        }
        Command::Eval { checkpoint, run } => {
            let e = commands::eval(&checkpoint, &run.to_config()?)?;
            writeln!(out, "accuracy={} loss={} correct={} total={}", e.accuracy, e.loss, e.correct, e.total)?;
            Ok(0)
        }
        Command::Gradcheck { seed, inject_fault } => {
            let outcome = commands::gradcheck(seed, inject_fault)?;
            write!(out, "{}", outcome.render())?;
            Ok(if outcome.passed { 0 } else { 1 })
        }
        Command::Curves { metrics, out: dir } => {
            for path in commands::curves(&metrics, &dir)? {
                writeln!(out, "{}", path.display())?;
            }
            Ok(0)
        }
    }
}
