//! `hgdetect`: dataset generation, training, transfer, evaluation and
//! motion-gated detection from the command line.
//!
//! Exit status: 0 on success, 1 on runtime failure, 2 on usage or config
//! errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::UsageError;

#[derive(Debug, Parser)]
#[command(name = "hgdetect", version, about = "Motion-gated handgun detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DataKind {
    /// One shape family per class.
    Shapes,
    /// "background" vs "handgun".
    Binary,
    /// Frame sequence with a moving square.
    Motion,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "shapes")]
    kind: DataKind,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    /// Noise standard deviation as a fraction of the pixel range.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    object_size: Option<usize>,
    /// Pixels per frame as `vx,vy`.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    velocity: Option<[i64; 2]>,
    /// First-frame top-left corner as `x,y`.
    #[arg(long, value_parser = parse_pair)]
    start: Option<[i64; 2]>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Labeled dataset directory (one subfolder per class).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training report (JSON lines); defaults to `<out>.log.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Stop once (validation) accuracy reaches this value.
    #[arg(long)]
    stop_at: Option<f64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    no_shuffle: bool,
}

#[derive(Debug, Args)]
struct TransferArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Pretrained checkpoint whose head is replaced.
    #[arg(long)]
    backbone: Option<PathBuf>,
    /// Number of leading parameterised layers to freeze.
    #[arg(long)]
    freeze: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// CSV with a `pred,label` header.
    #[arg(long, conflicts_with_all = ["checkpoint", "data"])]
    pairs: Option<PathBuf>,
    /// MetricRow JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Row name in the printed table.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, requires_all = ["fn_", "tn", "fp"], conflicts_with_all = ["checkpoint", "data", "pairs"])]
    tp: Option<u64>,
    #[arg(long = "fn", requires_all = ["tp", "tn", "fp"])]
    fn_: Option<u64>,
    #[arg(long, requires_all = ["tp", "fn_", "fp"])]
    tn: Option<u64>,
    #[arg(long, requires_all = ["tp", "fn_", "tn"])]
    fp: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Motion-gated region proposals over a frame directory.
    Proposals,
    /// Multi-scale sliding windows over one image.
    Sliding,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    frames: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    /// Event log (JSON lines); events go to stdout when omitted.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    theta: Option<f64>,
    /// Motion threshold on absolute frame differences.
    #[arg(long)]
    threshold: Option<u8>,
    #[arg(long)]
    blur: Option<usize>,
    #[arg(long)]
    min_area: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<f64>>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset or frame sequence.
    GenData {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: GenDataArgs,
    },
    /// Train a multi-class backbone.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Train a classifier from scratch.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Re-head a backbone to two classes and fine-tune it.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: TransferArgs,
    },
    /// Metrics from a checkpoint and dataset, a pairs CSV, or raw counts.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: EvalArgs,
    },
    /// Run the detector over frames or a single image.
    Detect {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: DetectArgs,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn parse_pair(s: &str) -> Result<[i64; 2], String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `a,b`, got `{s}`"))?;
    let num = |v: &str| v.trim().parse::<i64>().map_err(|e| format!("`{v}`: {e}"));
    Ok([num(a)?, num(b)?])
}
