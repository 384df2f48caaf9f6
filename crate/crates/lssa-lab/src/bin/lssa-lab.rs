//! Command-line front end: one subcommand per harness stage, all driven
//! by a TOML config. `--seed` and `--out` override the config's values.
//! `LSSA_LAB_WORKERS` caps the worker pool (default: one per core).
//!
//! Exit codes: 0 success, 2 configuration error, 3 missing artifact,
//! 4 numerical failure, 1 anything else.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lssa_lab::error::{LabError, Result};
use lssa_lab::harness::{commands, ExperimentConfig};

#[derive(Parser)]
#[command(name = "lssa-lab", about = "Adversarial retrieval laboratory", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Replace the config's seed list with this single root seed.
    #[arg(long, value_name = "K")]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    GenData(CommonArgs),
    /// Train the configured encoder pairs.
    Train(CommonArgs),
    /// Craft adversarial pairs for every arm, source, and seed.
    Attack(CommonArgs),
    /// Score stored attacks against every model and build the transfer matrix.
    Eval(CommonArgs),
    /// Sweep one budget parameter and aggregate the results.
    Ablate(CommonArgs),
    /// Assemble tables, triptychs, and caption diffs.
    Report(CommonArgs),
}

fn configure_workers() -> Result<()> {
    let Ok(raw) = std::env::var("LSSA_LAB_WORKERS") else { return Ok(()) };
    let workers: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            LabError::Config(format!("LSSA_LAB_WORKERS must be a positive integer, got {raw:?}"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| LabError::Config(format!("worker pool setup failed: {e}")))
}

fn run() -> Result<()> {
    configure_workers()?;
    let cli = Cli::parse();
    let (args, cmd): (&CommonArgs, fn(&ExperimentConfig) -> Result<()>) = match &cli.command {
        Command::GenData(a) => (a, commands::cmd_gen_data),
        Command::Train(a) => (a, commands::cmd_train),
        Command::Attack(a) => (a, commands::cmd_attack),
        Command::Eval(a) => (a, commands::cmd_eval),
        Command::Ablate(a) => (a, commands::cmd_ablate),
        Command::Report(a) => (a, commands::cmd_report),
    };
    let mut cfg = ExperimentConfig::load(&args.config)?;
    cfg.apply_overrides(args.seed, args.out.clone());
    cfg.validate()?;
    cmd(&cfg)
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err}");
        let record = serde_json::json!({ "kind": err.kind(), "message": err.to_string() });
        eprintln!("{record}");
        std::process::exit(err.exit_code());
    }
}
