//! The `gtsparse` command line.

mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use manifest::{peak_rss_kib, sha256_file, InputHash, RunManifest};

use crate::error::{Error, Result};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "GTSPARSE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "gtsparse",
    version,
    about = "Sparse graph transformer: estimate attention scores with a narrow network, then train a wide one on sampled fixed-degree patterns"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a JSON spec.
    Gen(GenArgs),
    /// Build an expander and the augmented attention pattern.
    Augment(AugmentArgs),
    /// Train the narrow score estimator and extract attention scores.
    TrainEstimator(EstimatorArgs),
    /// Train the wide network on score-sampled fixed-degree layers.
    TrainFinal(FinalArgs),
    /// Predict class probabilities with a trained final network.
    Predict(PredictArgs),
    /// Produce analysis tables.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Replace an existing non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Dataset spec (JSON); omitted fields take their defaults.
    #[arg(long)]
    pub spec: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Hamiltonian cycles in the expander (degree 2·C).
    #[arg(long, default_value_t = 3)]
    pub cycles: usize,
    #[arg(long, default_value_t = crate::graph::DEFAULT_MIN_GAP)]
    pub min_gap: f64,
    #[arg(long, default_value_t = crate::graph::DEFAULT_MAX_RETRIES)]
    pub max_retries: usize,
    /// Attention layers in the pattern.
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct EstimatorArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory of `augment`, or a pattern file.
    #[arg(long)]
    pub pattern: PathBuf,
    /// JSON training config; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = ["4", "8"])]
    pub width: Option<String>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Epochs at temperature 1 before annealing starts.
    #[arg(long)]
    pub lambda: Option<usize>,
    /// Per-epoch temperature decay.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Lowest temperature.
    #[arg(long)]
    pub floor: Option<f64>,
    #[arg(long, value_parser = ["none", "no-temp", "no-vnorm"])]
    pub ablation: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct FinalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Estimator run directory or a score file (.txt or .bin).
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Per-layer degrees, e.g. "3,3".
    #[arg(long)]
    pub degs: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long, value_parser = ["none", "uniform", "max", "no-temp", "no-vnorm"])]
    pub ablation: Option<String>,
    /// Samplings averaged at evaluation.
    #[arg(long)]
    pub eval_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Output directory of `train-final`.
    #[arg(long)]
    pub run: PathBuf,
    /// Node id file (one per line) or `all-test`.
    #[arg(long, default_value = "all-test")]
    pub nodes: String,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    /// Independent samplings averaged per node.
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(subcommand)]
    pub mode: AnalyzeMode,
}

#[derive(Debug, Args)]
pub struct ScoreInput {
    #[arg(long)]
    pub data: PathBuf,
    /// Estimator run directory or a score file.
    #[arg(long)]
    pub scores: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeMode {
    /// Energy distance of estimator scores across widths.
    Consistency {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pattern: PathBuf,
        #[arg(long, default_value = "4,8,16,32")]
        widths: String,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 32)]
        reference: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Mean attention entropy per layer.
    Entropy {
        #[command(flatten)]
        input: ScoreInput,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Top-k attention mass statistics.
    Topk {
        #[command(flatten)]
        input: ScoreInput,
        #[arg(long, default_value_t = 10)]
        k_max: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Score mass per edge type.
    EdgeTypes {
        #[command(flatten)]
        input: ScoreInput,
        /// Pattern supplying the edge types; defaults to the scores' own.
        #[arg(long)]
        pattern: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Deviation of attention scores under sign projections.
    Jlt {
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 512)]
        dim: usize,
        #[arg(long, default_value = "16,64,256")]
        dims: String,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Spectral error of entry-sampled score matrices.
    Spectral {
        #[arg(long, default_value_t = 64)]
        n: usize,
        /// Entries per row.
        #[arg(long, default_value_t = 8)]
        deg: usize,
        /// Logit range of the random rows; 0 gives uniform rows.
        #[arg(long, default_value_t = 2.0)]
        sharpness: f64,
        #[arg(long, default_value_t = 8)]
        min_exp: u32,
        #[arg(long, default_value_t = 16)]
        max_exp: u32,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
}

/// Process exit code for an error: 3 for numeric failures, 1 for I/O
/// failures, 2 for everything caused by input or configuration.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) => 3,
        Error::Io { .. } => 1,
        _ => 2,
    }
}

/// Worker threads from the environment (default 1).
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(t),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
    }
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let shown: Vec<String> = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match threads_from_env().and_then(|t| commands::dispatch(cli.command, &shown, t)) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
