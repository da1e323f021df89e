//! `ecgid`: run the identification pipeline stage by stage. Stages talk to
//! each other only through files under the work directory.

mod commands;
mod config;
mod fail;
mod report;

use clap::{Parser, Subcommand};
use commands::Ctx;
use config::{resolve_paths, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ecgid", version, about = "ECG feature-based identification pipeline")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, short, global = true, env = "ECGID_CONFIG")]
    config: Option<PathBuf>,
    /// Directory for artifacts whose path is not set explicitly.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single worker thread and no wall-clock fields, for byte-identical reruns.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a synthetic exam table.
    Synth,
    /// Refine the cohort, split by patient and build INTRA/INTER pairs.
    Prepare,
    /// INTRA vs INTER statistics on feature correlations (and embeddings).
    Stats,
    /// Train the embedding network.
    Train,
    /// Embed the evaluation and cohort splits.
    Embed,
    /// All-vs-all verification: EER and TAR at FAR.
    Verify,
    /// Closed-set identification: CMC and rank_k_95.
    Identify,
    /// Open-set identification: DIR at FAR per fusion strategy.
    Openset,
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.deterministic {
        rayon::ThreadPoolBuilder::new().num_threads(1).build_global()?;
    }
    let paths = resolve_paths(&cfg.paths, cli.work_dir.as_deref(), |k| std::env::var(k).ok());
    let ctx = Ctx { cfg, paths, deterministic: cli.deterministic };
    match cli.command {
        Command::Synth => commands::synth(&ctx),
        Command::Prepare => commands::prepare(&ctx),
        Command::Stats => commands::stats(&ctx),
        Command::Train => commands::train_cmd(&ctx),
        Command::Embed => commands::embed(&ctx),
        Command::Verify => commands::verify(&ctx),
        Command::Identify => commands::identify(&ctx),
        Command::Openset => commands::openset(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(fail::exit_code(&e))
        }
    }
}
