//! `cdqag-forge`: dataset synthesis, evaluation and model checks for change
//! question answering with grounding.
//!
//! Exit codes: 0 success, 1 a check failed (gradcheck, microfit), 2 bad input.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use cdqag_core::metrics::DEFAULT_THRESHOLD;
use cdqag_core::triplet::ChangeMeasure;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cdqag-forge", version, about)]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for generation and evaluation.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MeasureArg {
    Gross,
    Net,
}

impl From<MeasureArg> for ChangeMeasure {
    fn from(m: MeasureArg) -> Self {
        match m {
            MeasureArg::Gross => ChangeMeasure::Gross,
            MeasureArg::Net => ChangeMeasure::Net,
        }
    }
}

#[derive(Debug, Clone, Copy, Args)]
pub struct LambdaArgs {
    /// Weight of the textual-answer cross-entropy.
    #[arg(long, default_value_t = 0.2)]
    pub lambda_txt: f64,
    /// Weight of the mask BCE.
    #[arg(long, default_value_t = 1.0)]
    pub lambda_mask: f64,
    /// Weight of the text-to-pixel contrastive loss.
    #[arg(long, default_value_t = 1.0)]
    pub lambda_con: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate triplets from `<pair_id>_t1.pgm` / `<pair_id>_t2.pgm` masks.
    Generate {
        /// Directory holding the mask pairs (and taxonomy.json).
        pairs: PathBuf,
        /// Output JSONL.
        #[arg(short, long)]
        out: PathBuf,
        /// Taxonomy file; defaults to `<pairs>/taxonomy.json`.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "gross")]
        change_measure: MeasureArg,
        /// Replacement template bank (JSON).
        #[arg(long)]
        templates: Option<PathBuf>,
        /// Ask about every class, including ones absent from a scene.
        #[arg(long)]
        include_absent: bool,
    },
    /// Summary statistics of a triplet JSONL file.
    Stats {
        dataset: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Image-wise train/val/test split.
    Split {
        dataset: PathBuf,
        /// Directory for train/val/test JSONL files and manifest.json.
        #[arg(short, long)]
        out_dir: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.7, 0.1, 0.2])]
        ratios: Vec<f64>,
    },
    /// Score predictions against ground truth.
    Eval {
        /// Ground-truth triplet JSONL.
        gt: PathBuf,
        /// Prediction JSONL.
        pred: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Score files hold logits rather than probabilities.
        #[arg(long)]
        logits: bool,
        /// Write the JSON report here.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the model on one mask pair and a question.
    Forward {
        t1: PathBuf,
        t2: PathBuf,
        #[arg(short, long)]
        question: String,
        /// Taxonomy for the masks; defaults to the built-in ten classes.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Checkpoint directory; without one, parameters are drawn from --seed.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write the per-pixel probabilities as little-endian f32.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Include intermediate shapes and attention statistics.
        #[arg(long)]
        diagnostics: bool,
    },
    /// Write seeded model parameters as a checkpoint directory.
    Checkpoint {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 32)]
        channels: usize,
    },
    /// Finite-difference check of every analytic loss gradient.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[command(flatten)]
        lambdas: LambdaArgs,
        /// Write the JSON report here instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Fit the output heads on a synthetic sample and print the loss trace.
    Microfit {
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[command(flatten)]
        lambdas: LambdaArgs,
        /// Write the CSV trace here instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

pub enum Outcome {
    Ok,
    ChecksFailed,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("CDQAG_FORGE_LOG"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::ChecksFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
