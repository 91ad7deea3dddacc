//! `dam`: batch experiment runner for the associative-memory library and
//! the occluded-segmentation lab.
//!
//! Every command takes its parameters from flags, an optional `key = value`
//! config file (flags win), and defaults, in that order. The master seed
//! comes from --seed, then the config file, then the DAM_SEED environment
//! variable, then 7. Exit codes: 0 success, 1 runtime or numeric failure,
//! 2 validation or usage error.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dam",
    version,
    about = "Associative-memory experiments and an occluded-segmentation lab"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Pattern-recovery rate sweeps over memory load
    Capacity(CapacityArgs),
    /// Finite-difference verification of analytic gradients
    Gradcheck(GradcheckArgs),
    /// Train the segmentation model and emit the per-epoch log as CSV
    Train(TrainArgs),
    /// Memory on/off comparison across occlusion levels and seeds
    Ablate(AblateArgs),
    /// Count attractors of the continuous memory by iterated retrieval
    Census(CensusArgs),
}

#[derive(Args)]
pub struct CapacityArgs {
    /// Interaction kind: poly<n> with n >= 2, or exp
    #[arg(long)]
    pub interaction: Option<String>,
    /// Number of spins (1..=256)
    #[arg(long)]
    pub n: Option<usize>,
    /// Comma-separated stored-pattern counts, e.g. 1,2,4,8
    #[arg(long)]
    pub k: Option<String>,
    /// Probes per grid point (>= 50)
    #[arg(long)]
    pub trials: Option<usize>,
    /// Fraction of spins flipped in each probe (0..=1)
    #[arg(long)]
    pub corruption: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Plain-text `key = value` parameter file; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write output here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// One of: dam_forward, energy_continuous, seg_loss
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Architecture and optimizer settings shared by train and ablate.
#[derive(Args)]
pub struct TrainingFlags {
    /// Dataset size before the 90/10 train/validation split
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub memory_slots: Option<usize>,
    /// Drop the static-memory branch (baseline network)
    #[arg(long)]
    pub no_memory: bool,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup_lr: Option<f64>,
    #[arg(long)]
    pub min_lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Occlusion level of the generated dataset (0..=1)
    #[arg(long)]
    pub occlusion: Option<f64>,
    #[command(flatten)]
    pub flags: TrainingFlags,
    /// Save the best-validation parameters to this file
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AblateArgs {
    /// Comma-separated occlusion levels, e.g. 0.0,0.4
    #[arg(long)]
    pub occlusion: Option<String>,
    /// How many consecutive seeds to run, starting at the master seed
    #[arg(long)]
    pub seeds: Option<usize>,
    #[command(flatten)]
    pub flags: TrainingFlags,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CensusArgs {
    /// Retrieval sharpness of the continuous memory
    #[arg(long)]
    pub beta: Option<f64>,
    /// Builtin set name (well_separated_3) or a pattern file path
    #[arg(long)]
    pub patterns: Option<String>,
    /// Number of random probe states
    #[arg(long)]
    pub queries: Option<usize>,
    /// Retrieval iterations per probe
    #[arg(long)]
    pub iters: Option<usize>,
    /// Attractor merge distance (default: 1e-4 times the mean pattern norm)
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Capacity(a) => commands::cmd_capacity(a),
        Cmd::Gradcheck(a) => commands::cmd_gradcheck(a),
        Cmd::Train(a) => commands::cmd_train(a),
        Cmd::Ablate(a) => commands::cmd_ablate(a),
        Cmd::Census(a) => commands::cmd_census(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
