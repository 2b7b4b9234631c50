//! Command-line front end for the cellularity pipeline.
//!
//! One binary, one subcommand per stage. Configuration resolves as
//! flags > config file > built-in defaults; every run writes a manifest with
//! the resolved values next to its output; all randomness flows from --seed.
//! Outputs are byte-identical across reruns and across --threads settings.

mod cmds;
mod config;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cellgrade",
    version,
    about = "Tumor cellularity from nucleus probability maps: masks, features, boosting, agreement"
)]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Base seed for every random stage of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for patch-parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress notes on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize point annotations into 4-channel disk masks, one PMAP per patch.
    SynthMasks(SynthMasksArgs),
    /// Extract the 81-feature vector from every PMAP in a directory.
    Extract(ExtractArgs),
    /// Fit a gradient-boosted tree model on a feature CSV.
    Train(TrainArgs),
    /// Score a feature CSV with a trained model.
    Predict(PredictArgs),
    /// Compare predictions against reference scores: MSE, kappa, ICC with bootstrap CIs.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic dataset (maps, annotations, targets, manifest).
    GenSynth(GenSynthArgs),
    /// Check analytic loss gradients against finite differences.
    LossCheck(LossCheckArgs),
}

#[derive(Args)]
struct SynthMasksArgs {
    /// CSV of nucleus centers: patch_id,x,y,class.
    annotations: PathBuf,
    /// Patch width in pixels.
    #[arg(long)]
    width: Option<u32>,
    /// Patch height in pixels.
    #[arg(long)]
    height: Option<u32>,
    /// Disk diameter in pixels [default: 15].
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    diameter: Option<u32>,
    /// Directory for the generated <patch_id>.pmap files.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    /// Directory of .pmap files.
    #[arg(long, value_name = "DIR")]
    maps_dir: PathBuf,
    /// Optional targets CSV (patch_id,true_cellularity) to join as a target column.
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Output feature CSV (a .schema.json sidecar is written alongside).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Feature CSV with a target column.
    #[arg(long)]
    features: PathBuf,
    /// Boosting rounds [default: 600].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    rounds: Option<u64>,
    /// Learning rate [default: 0.01].
    #[arg(long)]
    lr: Option<f64>,
    /// Maximum tree depth [default: 5].
    #[arg(long)]
    max_depth: Option<u64>,
    /// Maximum leaves per tree [default: 8].
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    max_leaves: Option<u64>,
    /// Minimum samples per leaf [default: 5].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    min_leaf: Option<u64>,
    /// Output model JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Trained model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Feature CSV to score.
    #[arg(long)]
    features: PathBuf,
    /// Output CSV: patch_id,prediction.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predictions CSV: patch_id,prediction.
    #[arg(long)]
    predictions: PathBuf,
    /// Reference CSV: patch_id,true_cellularity.
    #[arg(long)]
    targets: PathBuf,
    /// Bootstrap replicates [default: 2000].
    #[arg(long)]
    n_boot: Option<u64>,
    /// Output report JSON (a per-patch CSV is written alongside with .csv extension).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenSynthArgs {
    /// Number of patches to generate.
    #[arg(long)]
    n: u64,
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Patch width [default: 256].
    #[arg(long)]
    width: Option<u32>,
    /// Patch height [default: 256].
    #[arg(long)]
    height: Option<u32>,
    /// Nucleus disk diameter [default: 15].
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    diameter: Option<u32>,
    /// Normal nucleus count range, LO..HI or a single count [default: 0..30].
    #[arg(long, value_parser = parse_count_range)]
    normal_range: Option<(u32, u32)>,
    /// Lymphocyte count range [default: 0..40].
    #[arg(long, value_parser = parse_count_range)]
    lymphocyte_range: Option<(u32, u32)>,
    /// Malignant count range [default: 0..70].
    #[arg(long, value_parser = parse_count_range)]
    malignant_range: Option<(u32, u32)>,
    /// Minimum distance between nucleus centers [default: 8].
    #[arg(long)]
    min_separation: Option<f64>,
    /// Gaussian blur sigma on mask channels, 0 disables [default: 1].
    #[arg(long)]
    softness_sigma: Option<f64>,
    /// Additive pixel noise sigma, 0 disables [default: 0.02].
    #[arg(long)]
    map_noise_sigma: Option<f64>,
    /// Additive target noise sigma, 0 disables [default: 0.02].
    #[arg(long)]
    label_noise_sigma: Option<f64>,
    /// Malignant area fraction to cellularity multiplier [default: 5].
    #[arg(long)]
    cellularity_scale: Option<f64>,
}

#[derive(Args)]
struct LossCheckArgs {
    /// Side length of the square test maps [default: 16].
    #[arg(long, value_parser = clap::value_parser!(u32).range(2..))]
    size: Option<u32>,
    /// Number of random coordinates to check [default: 1000].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    trials: Option<u64>,
    /// Jaccard mixing weight [default: 0.15].
    #[arg(long)]
    alpha: Option<f64>,
}

fn parse_count_range(s: &str) -> Result<(u32, u32), String> {
    let (lo, hi) = match s.split_once("..") {
        Some((lo, hi)) => (lo, hi),
        None => (s, s),
    };
    let parse = |t: &str| {
        t.trim()
            .parse::<u32>()
            .map_err(|e| format!("bad count {t:?}: {e}"))
    };
    let (lo, hi) = (parse(lo)?, parse(hi)?);
    if lo > hi {
        return Err(format!("range {s:?} has lo > hi"));
    }
    Ok((lo, hi))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = config::load(cli.config.as_deref())?;
    let global = config::Global {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        quiet: cli.quiet || file.quiet.unwrap_or(false),
    };
    if let Some(threads) = cli.threads.or(file.threads) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("building the worker pool")?;
    }
    match cli.command {
        Command::SynthMasks(args) => cmds::synth_masks(args, &file, &global),
        Command::Extract(args) => cmds::extract(args, &global),
        Command::Train(args) => cmds::train(args, &file, &global),
        Command::Predict(args) => cmds::predict(args, &global),
        Command::Evaluate(args) => cmds::evaluate(args, &file, &global),
        Command::GenSynth(args) => cmds::gen_synth(args, &file, &global),
        Command::LossCheck(args) => cmds::loss_check(args, &file, &global),
    }
}
