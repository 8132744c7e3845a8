//! Single binary exposing every pipeline stage as a subcommand.
//!
//! Results go to stdout (or `--out`), diagnostics to stderr. Exit codes:
//! 0 on success, 1 on domain errors (bad data, failed checks), 2 on usage
//! errors.

mod cmd_augment;
mod cmd_eval;
mod cmd_gradcheck;
mod cmd_loss;
mod cmd_mask;
mod cmd_shuffle;
mod cmd_train;
mod cmd_warp;
mod imgio;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "viewsynth",
    version,
    about = "Differentiable view synthesis: warping, losses, gradients, and depth evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resample an image through depth + pose + intrinsics and write the
    /// synthesized view with its validity mask.
    Warp(cmd_warp::WarpArgs),
    /// Compute the multi-scale photometric + smoothness loss.
    Loss(cmd_loss::LossArgs),
    /// Compare analytic gradients against central differences on a
    /// synthetic scene.
    Gradcheck(cmd_gradcheck::GradcheckArgs),
    /// Recover depth/pose/intrinsics on a synthetic scene with AdamW.
    #[command(name = "train-toy")]
    TrainToy(cmd_train::TrainToyArgs),
    /// Evaluate predicted depth maps against ground truth.
    Eval(cmd_eval::EvalArgs),
    /// Apply seeded weather augmentations to an image.
    Augment(cmd_augment::AugmentArgs),
    /// Sub-pixel (pixel-shuffle) channel/space rearrangement.
    Shuffle(cmd_shuffle::ShuffleArgs),
    /// Merge instance masks and flatten object disparity.
    Maskadjust(cmd_mask::MaskadjustArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Warp(args) => cmd_warp::run(args),
        Command::Loss(args) => cmd_loss::run(args),
        Command::Gradcheck(args) => cmd_gradcheck::run(args),
        Command::TrainToy(args) => cmd_train::run(args),
        Command::Eval(args) => cmd_eval::run(args),
        Command::Augment(args) => cmd_augment::run(args),
        Command::Shuffle(args) => cmd_shuffle::run(args),
        Command::Maskadjust(args) => cmd_mask::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

/// Parse a comma-separated list of pyramid scales.
pub(crate) fn parse_scales(spec: &str) -> anyhow::Result<Vec<usize>> {
    let scales = spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| ()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| anyhow::anyhow!("invalid scale list {spec:?} (expected e.g. \"0,1,2,3\")"))?;
    if scales.is_empty() {
        anyhow::bail!("scale list must not be empty");
    }
    Ok(scales)
}
