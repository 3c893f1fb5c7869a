//! `curve`: train the tone-curve policy, enhance images, score them, and time
//! the LUT path.
//!
//! Exit codes: 0 success, 1 any per-item or fatal failure, 2 usage error.
//! Results go to stdout (or the named output file); logs go to stderr.

mod commands;
mod pool;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "curve", version, about = "Bezier tone-curve low-light enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enhance PNG images with a trained policy.
    Enhance(EnhanceArgs),
    /// Train a policy with soft actor-critic.
    Train(TrainArgs),
    /// Enhance inputs of (input, target) pairs and report PSNR/SSIM.
    Eval(EvalArgs),
    /// Time the LUT path against naive full-resolution application.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct PipelineArgs {
    /// Curve steps per image.
    #[arg(long, short = 'T', default_value_t = curve_core::enhance::DEFAULT_STEPS)]
    steps: usize,
    /// Linear pieces per sampled curve.
    #[arg(long, short = 'L', default_value_t = curve_core::tone_curve::DEFAULT_SEGMENTS)]
    segments: usize,
    /// Build the state from a centered 224x224 crop instead of the whole frame.
    #[arg(long)]
    state_crop: bool,
}

#[derive(Args)]
struct EnhanceArgs {
    /// Policy archive, or a checkpoint directory containing `policy.bin`.
    #[arg(long, short)]
    weights: PathBuf,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
    /// Also write `<name>.trace.json` with actions, curves and the LUT.
    #[arg(long)]
    trace: bool,
    /// Worker threads (defaults to available cores).
    #[arg(long, short)]
    jobs: Option<usize>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Input PNG files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON array of {"path", "classes"}.
    #[arg(long, short)]
    manifest: PathBuf,
    /// Training config JSON; omitted fields take their defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// `proxy` or `remote:URL`.
    #[arg(long, default_value = "proxy")]
    reward: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for checkpoints and the final archive.
    #[arg(long, short)]
    out: PathBuf,
    /// Continue from this checkpoint directory.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Training log path (newline-delimited JSON); stdout when omitted.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Log only every Nth update event.
    #[arg(long, default_value_t = 1)]
    log_every: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// JSON array of {"input", "target"} paths.
    #[arg(long, short)]
    pairs: PathBuf,
    #[arg(long, short)]
    weights: PathBuf,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, short)]
    jobs: Option<usize>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Policy archive; a seeded random policy when omitted.
    #[arg(long, short)]
    weights: Option<PathBuf>,
    /// Comma-separated HD, FHD, UHD or HEIGHTxWIDTH.
    #[arg(long, value_delimiter = ',', default_value = "HD,FHD,UHD")]
    resolutions: Vec<curve_core::bench::Resolution>,
    #[arg(long, default_value_t = 100)]
    repeat: usize,
    #[arg(long, default_value_t = 8)]
    bit_depth: u32,
    /// Skip the naive full-resolution path.
    #[arg(long)]
    no_naive: bool,
    /// Emit JSON instead of a table.
    #[arg(long)]
    json: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Enhance(a) => commands::enhance(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
