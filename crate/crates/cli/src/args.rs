use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use femlab::oracle::suites::MC_DRAWS;

#[derive(Debug, Parser)]
#[command(name = "femlab", version, about = "Filtered EM on a synthetic prefix-sum reasoning task")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a train/test dataset directory.
    GenerateData(GenerateArgs),
    /// Run filtered EM and write a run directory.
    Train(TrainArgs),
    /// Run every cell of a grid file.
    Sweep(SweepArgs),
    /// Run oracle verification suites.
    Verify(VerifyArgs),
    /// Greedy test accuracy of a checkpoint.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 5)]
    pub vocab: usize,
    #[arg(long, default_value_t = 4)]
    pub qlen: usize,
    #[arg(long, default_value_t = 2000)]
    pub train_n: usize,
    #[arg(long, default_value_t = 2000)]
    pub test_n: usize,
    #[arg(long, default_value_t = 257)]
    pub seed: u64,
    /// Output directory; receives `train.data` and `test.data`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags left unset fall back to `--config`, then to built-in defaults.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML file with any of the run keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory written by `generate-data`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// rs:<M>, star:<eps>, pps:<eps> or exact.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr_start: Option<f64>,
    #[arg(long)]
    pub lr_end: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults to `$FEMLAB_OUTPUT_ROOT/<scheme>_s<seed>`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Take every gradient of an iteration at its starting parameters.
    #[arg(long)]
    pub freeze_grad_point: bool,
    /// Rationales always have exactly `max_len` tokens.
    #[arg(long)]
    pub fixed_length: bool,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// zeros, uniform:<scale> or prior:<strength>:<noise>.
    #[arg(long)]
    pub init: Option<String>,
    /// Start from a checkpoint file instead of `--init`.
    #[arg(long)]
    pub init_checkpoint: Option<PathBuf>,
    /// Apply updates in dataset order.
    #[arg(long)]
    pub no_shuffle: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub grid: PathBuf,
    /// Defaults to `$FEMLAB_OUTPUT_ROOT/sweep-<grid file stem>`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// all, normalization, gradients, posterior, lemma1, em or unbiasedness.
    #[arg(long, default_value = "all")]
    pub suite: femlab::oracle::suites::Suite,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Monte-Carlo draws per scheme in the unbiasedness suite.
    #[arg(long, default_value_t = MC_DRAWS)]
    pub draws: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory; the test split is evaluated.
    #[arg(long)]
    pub data: PathBuf,
}
