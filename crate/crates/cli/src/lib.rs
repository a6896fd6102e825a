//! `hmr`: train, evaluate, gradient-check, ablate and visualize the
//! deformable-attention mesh regressor on synthetic data.

pub mod commands;
pub mod features;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::run;

pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "hmr", version, about = "Deformable cross-attention human mesh regressor")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a generated synthetic dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint (MPJPE, PA-MPJPE, PVE).
    Eval(EvalArgs),
    /// Finite-difference check of every differentiable kernel.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate a suite of decoder variants on the same data.
    Ablate(AblateArgs),
    /// Dump attention hotspots and sampling-position images.
    Visualize(VisualizeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides the configured step count.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset config; defaults to the checkpoint's own.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Externally prepared feature maps with ground-truth parameters.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Comma-separated joint indices for the joint metrics.
    #[arg(long, value_delimiter = ',')]
    pub joints: Option<Vec<usize>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Perturbs every analytic gradient; the run must then fail.
    #[arg(long, hide = true)]
    pub corrupt: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Table2,
    Table3,
    Table4,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
    #[arg(long, default_value_t = hmr_core::decoder::DEFAULT_HOTSPOT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Feature maps to visualize instead of the synthetic dataset.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// A check that ran and failed (exit code 1).
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

/// Process exit code for an error.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<CheckFailed>().is_some() {
            return EXIT_CHECK_FAILED;
        }
        if let Some(err) = cause.downcast_ref::<hmr_core::Error>() {
            return match err {
                hmr_core::Error::Divergence { .. } | hmr_core::Error::Numeric(_) => EXIT_DIVERGED,
                _ => EXIT_USAGE,
            };
        }
    }
    EXIT_USAGE
}
