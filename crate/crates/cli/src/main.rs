//! `spikedistill`: train, evaluate and inspect spiking networks.
//!
//! Exit codes: 0 success, 2 usage, config or data error, 3 numeric
//! failure.

mod commands;
mod datasets;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "spikedistill", version, about = "Spiking network training with temporal and spatial self-distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network and write metrics, the resolved config and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Diagnostics and data utilities.
    #[command(subcommand)]
    Tools(Tool),
}

/// Config file, then `--set` pairs, then named flags; later wins.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Flat `section.key=value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.lr=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Weight of the temporal distillation term (`distill.alpha`).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the spatial distillation term (`distill.beta`).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Student timesteps, also used for evaluation (`distill.student_steps`).
    #[arg(long)]
    pub ts: Option<usize>,
    /// Teacher timesteps simulated during training (`distill.teacher_steps`).
    #[arg(long)]
    pub tt: Option<usize>,
    /// Master seed (`train.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of epochs (`train.epochs`).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Output directory (`output.dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run config; defaults to `resolved.cfg` next to the checkpoint.
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Inference timesteps; defaults to `distill.student_steps`.
    #[arg(long)]
    pub ts: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Tool {
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Bin an `.evst` event stream into frames.
    Integrate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        window_ms: f64,
        /// Target grid `HxW`; defaults to the sensor size.
        #[arg(long, value_name = "HxW")]
        size: Option<String>,
        /// Output directory for the frame archive.
        #[arg(long)]
        out: PathBuf,
    },
    /// Spike firing-rate map of one stage for one test sample.
    Sfr {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        ts: Option<usize>,
        /// Stage index; defaults to the weak classifier's attachment stage.
        #[arg(long)]
        stage: Option<usize>,
        /// Test-set sample index.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Output directory for `sfr.pgm` and `sfr.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Variance of empirical against Bayes-distilled risk estimates.
    Risk {
        #[arg(long, default_value = "toy2")]
        contexts: String,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 10000)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional CSV report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy of the full network, the weak classifier and a
    /// confidence-gated blend of the two.
    EarlyExit {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        ts: Option<usize>,
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
    },
    /// Write a synthetic dataset: IDX archives for `bars`, `.evst` files
    /// for `moving-bar`.
    Synth {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => commands::train(&args),
        Command::Eval(args) => commands::eval(&args),
        Command::Tools(tool) => commands::tools(tool),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
