use std::path::PathBuf;

use anyhow::{Context, Result};
use bpgnn::experiments::{self, ExperimentConfig, ExperimentKind};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bpgnn", version, about = "Boolean product graph neural network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train over all seeds; write metrics.json, epochs.csv and checkpoints.
    Train(Common),
    /// Accuracy under random edge addition and deletion.
    Robustness(Common),
    /// Same-label ratio per edge-probability bin on the test set.
    Homophily(Common),
    /// Accuracy per number of Boolean product layers.
    AblationLayers(Common),
    /// Sparse versus dense timing of the probabilistic Boolean product.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Added to every seed.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Train(a) => (ExperimentKind::Train, a),
        Command::Robustness(a) => (ExperimentKind::Robustness, a),
        Command::Homophily(a) => (ExperimentKind::Homophily, a),
        Command::AblationLayers(a) => (ExperimentKind::AblationLayers, a),
        Command::Bench(a) => (ExperimentKind::Bench, a),
    };
    let mut cfg = ExperimentConfig::load(&args.config)
        .with_context(|| format!("loading config {}", args.config.display()))?;
    // The subcommand decides what runs; the config's kind is informational.
    cfg.kind = kind;
    let out = args
        .out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    experiments::run(&cfg, &out, args.seed_offset)?;
    eprintln!("results written to {}", out.display());
    Ok(())
}
