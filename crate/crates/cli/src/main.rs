//! `cvgl`: command-line front end.
//!
//! Every subcommand reads an optional TOML `--config`, applies flag
//! overrides, writes its outputs plus `config.toml` (the effective
//! configuration) and `manifest.json` into `--out-dir`, and exits with 0 on
//! success, 1 on a domain error and 2 on a usage error.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cvgl", version, about = "Cross-view geo-localization training and evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML file with this subcommand's parameters; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for all outputs.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic multi-view world and dump its views as .emb files.
    GenWorld(GenWorldArgs),
    /// Train the shared encoder on a synthetic world.
    Train(TrainArgs),
    /// Score a query/gallery embedding pair against ground truth.
    EvalRetrieval(EvalRetrievalArgs),
    /// Compare the rank-sharded loss with the single-process loss.
    LossCheck(LossCheckArgs),
    /// Score match/explanation predictions.
    EvalX(EvalXArgs),
    /// Resample and merge pair manifests.
    Mix(MixArgs),
}

#[derive(Debug, Args)]
struct GenWorldArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_locations: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
enum Phase {
    /// Base modality only.
    One,
    /// All modalities, starting from `--init` when given.
    Two,
    /// Phase one followed by phase two.
    Both,
    /// All modalities from a random encoder.
    Scratch,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    phase: Option<Phase>,
    /// Epochs for every phase that runs.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    world_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Seed for both the world and training.
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint (.emb) to start from.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalRetrievalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    gallery: PathBuf,
    /// Ground truth, one JSON object per line.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    #[arg(long)]
    top_percent: Option<f64>,
}

#[derive(Debug, Args)]
struct LossCheckArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    world_sizes: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    label_smoothing: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Debug, Args)]
struct EvalXArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    references: PathBuf,
    /// Explanation vectors (.emb), ids equal to sample ids.
    #[arg(long, requires = "reference_vectors", conflicts_with = "fallback_embedder")]
    prediction_vectors: Option<PathBuf>,
    #[arg(long, requires = "prediction_vectors", conflicts_with = "fallback_embedder")]
    reference_vectors: Option<PathBuf>,
    /// Use the built-in hashing embedder instead of vector files.
    #[arg(long)]
    fallback_embedder: bool,
}

#[derive(Debug, Args)]
struct MixArgs {
    #[command(flatten)]
    common: Common,
    /// Single-dataset manifest (JSON lines); repeat for each dataset.
    #[arg(long = "manifest", required = true)]
    manifests: Vec<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also expand the mix into pos/neg pairs for these languages.
    #[arg(long, value_delimiter = ',')]
    expand: Option<Vec<String>>,
}

/// A problem with how the command was invoked rather than with the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Joins the error chain, skipping causes already spelled out by their parent.
fn render_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::GenWorld(a) => commands::gen_world(a),
        Command::Train(a) => commands::train(a),
        Command::EvalRetrieval(a) => commands::eval_retrieval(a),
        Command::LossCheck(a) => commands::loss_check(a),
        Command::EvalX(a) => commands::eval_x(a),
        Command::Mix(a) => commands::mix(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_chain(&e));
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
