//! `sgloc`: command-line front end for the saliency-guided localization
//! pipeline.
//!
//! Exit status is 0 on success, 1 when some images failed (each is listed on
//! stderr), and 2 on configuration or I/O errors that stop the command.

mod commands;
mod config;
mod output;
mod overlay;
mod records;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::commands::Ctx;
use crate::config::PipelineConfig;
use crate::runner::Outcome;

#[derive(Debug, Parser)]
#[command(
    name = "sgloc",
    version,
    about = "Saliency-guided discriminative localization pipeline"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; may be repeated. Applied after the
    /// config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Dataset directory holding `images.txt` and the other annotation files.
    #[arg(long, global = true, value_name = "DIR")]
    dataset_root: Option<PathBuf>,
    /// Directory of `<image_id>.npy` feature tensors and `weights.npy`.
    #[arg(long, global = true, value_name = "DIR")]
    feature_dir: Option<PathBuf>,
    /// Root of every output file [default: out].
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    /// Seed for anchor sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-image work; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Class activation maps from feature tensors and classifier weights.
    Cam(commands::cam::CamArgs),
    /// Pseudo boxes from saliency maps written by `cam`.
    PseudoBox(commands::pseudo_box::PseudoBoxArgs),
    /// Anchor labels and regression targets from pseudo boxes, and
    /// optionally the loss of supplied predictions.
    RpnTargets(commands::rpn_targets::RpnTargetsArgs),
    /// Non-maximum suppression over a proposal CSV.
    Nms(commands::nms::NmsArgs),
    /// Fixed-size max pooling of feature regions.
    Roipool(commands::roipool::RoipoolArgs),
    /// Accuracy, localization accuracy, IoU histogram, PCL and confusion.
    Eval(commands::eval::EvalArgs),
    /// Confusion matrix and the most confused class pairs.
    Confusion(commands::eval::ConfusionArgs),
    /// Draw predicted boxes, ground truth and parts onto images.
    Render(commands::render::RenderArgs),
    /// Parse the dataset annotations into a JSON-lines index.
    Index(commands::index::IndexArgs),
}

fn load_config(g: &GlobalArgs) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &g.config {
        cfg.apply_file(path)?;
    }
    for assignment in &g.set {
        let (k, v) = assignment
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {assignment:?}"))?;
        cfg.set(k, v)?;
    }
    if let Some(p) = &g.dataset_root {
        cfg.dataset_root = Some(p.clone());
    }
    if let Some(p) = &g.feature_dir {
        cfg.feature_dir = Some(p.clone());
    }
    if let Some(p) = &g.output_dir {
        cfg.output_dir = p.clone();
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Outcome> {
    let cfg = load_config(&cli.global)?;
    let ctx = Ctx::new(cfg, cli.global.jobs)?;
    match cli.command {
        Command::Cam(a) => commands::cam::run(&ctx, &a),
        Command::PseudoBox(a) => commands::pseudo_box::run(&ctx, &a),
        Command::RpnTargets(a) => commands::rpn_targets::run(&ctx, &a),
        Command::Nms(a) => commands::nms::run(&ctx, &a),
        Command::Roipool(a) => commands::roipool::run(&ctx, &a),
        Command::Eval(a) => commands::eval::run_eval(&ctx, &a),
        Command::Confusion(a) => commands::eval::run_confusion(&ctx, &a),
        Command::Render(a) => commands::render::run(&ctx, &a),
        Command::Index(a) => commands::index::run(&ctx, &a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) if outcome.failures.is_empty() => ExitCode::SUCCESS,
        Ok(outcome) => {
            for f in &outcome.failures {
                eprintln!("failed: image {}: {}", f.image_id, f.message);
            }
            eprintln!(
                "{} of {} images failed",
                outcome.failures.len(),
                outcome.failures.len() + outcome.processed
            );
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
