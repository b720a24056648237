//! `ffa` — synthesize hazy datasets, train the dehazing network, run it on
//! images, and score the results.
//!
//! Exit codes: 0 success, 2 usage/validation error, 3 runtime abort.

mod commands;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "ffa",
    about = "Feature-attention image dehazing laboratory",
    version,
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic hazy/clean dataset from the scattering model
    Synth(SynthArgs),
    /// Train a model on a dataset directory
    Train(TrainArgs),
    /// Dehaze one PPM image with a trained checkpoint
    Dehaze(DehazeArgs),
    /// Score dehazed outputs against ground truth (PSNR/SSIM)
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory (creates clean/, hazy/, meta/)
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Number of samples
    #[arg(long, default_value_t = 60)]
    count: usize,
    /// Sample size as HxW
    #[arg(long, default_value = "64x64")]
    size: String,
    /// Generation seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Minimum atmospheric light A
    #[arg(long, default_value_t = 0.8)]
    a_min: f64,
    /// Maximum atmospheric light A
    #[arg(long, default_value_t = 1.0)]
    a_max: f64,
    /// Minimum scattering coefficient beta
    #[arg(long, default_value_t = 0.04)]
    beta_min: f64,
    /// Maximum scattering coefficient beta
    #[arg(long, default_value_t = 0.2)]
    beta_max: f64,
    /// Depth family: linear, radial, or mixed (alternates per sample)
    #[arg(long, default_value = "mixed")]
    depth: String,
    /// Maximum scene depth
    #[arg(long, default_value_t = 10.0)]
    depth_scale: f64,
    /// Directory of clean source PPMs (procedural textures if omitted)
    #[arg(long, value_name = "DIR")]
    source: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (layout from `ffa synth`)
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Output checkpoint path
    #[arg(long, value_name = "CKPT")]
    out: PathBuf,
    /// Loss log path (CSV step,lr,l1); defaults to <out>.loss.csv
    #[arg(long, value_name = "CSV")]
    loss_csv: Option<PathBuf>,
    /// Total training steps (full scale runs 500000)
    #[arg(long, default_value_t = 5000)]
    steps: u64,
    /// Group count G
    #[arg(long, default_value_t = 3)]
    groups: usize,
    /// Basic blocks per group B
    #[arg(long, default_value_t = 19)]
    blocks: usize,
    /// Feature channels C
    #[arg(long, default_value_t = 64)]
    channels: usize,
    /// Attention bottleneck divisor r
    #[arg(long, default_value_t = 8)]
    reduction: usize,
    /// Pixel-attention kernel size
    #[arg(long, default_value_t = 3)]
    pa_kernel: usize,
    /// Square patch size (desk-scale default 48; full scale uses 240)
    #[arg(long, default_value_t = 48)]
    patch: usize,
    /// Patches per step
    #[arg(long, default_value_t = 2)]
    batch: usize,
    /// Initial learning rate (cosine-annealed to 0)
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Adam beta1
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    /// Adam beta2
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    /// Adam epsilon
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
    /// Run seed (init, batch sampling, augmentation)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint cadence in steps (0 = final only)
    #[arg(long, default_value_t = 0)]
    checkpoint_every: u64,
    /// Disable feature attention in basic blocks
    #[arg(long)]
    no_fa: bool,
    /// Disable local residual learning
    #[arg(long)]
    no_lrl: bool,
    /// Disable fusion attention
    #[arg(long)]
    no_ffa: bool,
    /// Disable dihedral patch augmentation
    #[arg(long)]
    no_augment: bool,
    /// Resume from an existing checkpoint (its stored configs are used;
    /// conflicting flags are rejected)
    #[arg(long, value_name = "CKPT")]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct DehazeArgs {
    /// Trained checkpoint
    #[arg(long, value_name = "CKPT")]
    ckpt: PathBuf,
    /// Input hazy image (binary PPM)
    #[arg(long = "in", value_name = "IMG.ppm")]
    input: PathBuf,
    /// Output dehazed image (binary PPM, clamped to [0,1])
    #[arg(long, value_name = "OUT.ppm")]
    out: PathBuf,
    /// Also export attention maps into this directory
    #[arg(long, value_name = "DIR")]
    attn: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained checkpoint
    #[arg(long, value_name = "CKPT")]
    ckpt: PathBuf,
    /// Directory of hazy inputs (*.ppm)
    #[arg(long, value_name = "DIR")]
    hazy: PathBuf,
    /// Directory of ground-truth images with matching names
    #[arg(long, value_name = "DIR")]
    gt: PathBuf,
    /// Output CSV report (name,psnr_db,ssim + mean row); the hazy-input
    /// baseline goes to <report>.baseline.csv
    #[arg(long, value_name = "OUT.csv")]
    report: PathBuf,
}

/// Failures carrying their process exit code.
enum CliError {
    /// Bad flags, unreadable inputs, conflicting configs: exit 2.
    Usage(String),
    /// Failures while the work is running: exit 3.
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::Train(args) => commands::train(args),
        Command::Dehaze(args) => commands::dehaze(args),
        Command::Eval(args) => commands::eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
