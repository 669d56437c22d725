//! `eyemark`: preprocessing, augmentation, training, evaluation, inference
//! and heatmap rendering for the eye-landmark model.

mod commands;
mod stage;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "eyemark", version, about = "Eye-landmark localization pipeline", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Artifacts go to OUT_DIR/<verb>/.
    #[arg(long, value_name = "PATH", default_value = "out")]
    pub out_dir: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Crop raw images (with .pts and optional .box sidecars) into a manifest.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// Directory of raw images.
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
    },
    /// Add flipped, rotated and blurred copies of a preprocessed manifest.
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
    },
    /// Train on a manifest; writes a checkpoint and a per-epoch CSV log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
    },
    /// Score a checkpoint or a predictions file against a manifest.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_name = "PATH", required_unless_present = "predictions", conflicts_with = "predictions")]
        checkpoint: Option<PathBuf>,
        /// JSON written by `infer`.
        #[arg(long, value_name = "PATH")]
        predictions: Option<PathBuf>,
        /// Overrides the configured NME threshold.
        #[arg(long, value_name = "F")]
        threshold: Option<f64>,
    },
    /// Predict 12 eye landmarks per image.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// An image, a directory of images, or a manifest.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Write heatmap overlays for each image.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// An image, a directory of images, or a manifest.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EYEMARK_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess { common, input } => commands::preprocess(&common, &input),
        Command::Augment { common, manifest } => commands::augment(&common, &manifest),
        Command::Train { common, manifest } => commands::train(&common, &manifest),
        Command::Eval {
            common,
            manifest,
            checkpoint,
            predictions,
            threshold,
        } => commands::eval(&common, &manifest, checkpoint.as_deref(), predictions.as_deref(), threshold),
        Command::Infer { common, checkpoint, input } => commands::infer(&common, &checkpoint, &input),
        Command::Render { common, checkpoint, input } => commands::render(&common, &checkpoint, &input),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
