use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use bitraj_cli::{Pipeline, RunConfig, Stage};
use bitraj_core::eval::AugmentMode;
use clap::{Args, Parser, Subcommand};

/// Bidirectional trajectory diffusion augmentation pipeline.
///
/// Every flag can also be set through an environment variable with the
/// `BITRAJ_` prefix (`BITRAJ_CONFIG`, `BITRAJ_SEED`, `BITRAJ_OUT`,
/// `BITRAJ_JOBS`, `BITRAJ_MODE`, `BITRAJ_FORCE`); flags win over variables.
#[derive(Parser)]
#[command(name = "bitraj", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, short, env = "BITRAJ_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, env = "BITRAJ_SEED")]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, env = "BITRAJ_OUT")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "BITRAJ_JOBS")]
    jobs: Option<usize>,
    /// Restrict per-mode stages to one mode.
    #[arg(long, env = "BITRAJ_MODE", value_parser = parse_mode)]
    mode: Option<AugmentMode>,
    /// Re-run stages even when their inputs are unchanged.
    #[arg(long, env = "BITRAJ_FORCE")]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Collect the offline dataset with the behavior policy.
    Collect(Common),
    /// Train the forward and backward diffusion models.
    TrainDiffusion(Common),
    /// Train the inverse dynamics and reward models.
    TrainCompletion(Common),
    /// Sample, stitch and complete trajectories.
    Generate(Common),
    /// Apply the OOD and greedy return filters.
    Filter(Common),
    /// Merge kept trajectories into the dataset.
    Augment(Common),
    /// Train learners and evaluate them from seam-crossing starts.
    Eval(Common),
    /// Dynamic error and L2 distance of the generated trajectories.
    Metrics(Common),
    /// Assemble the report from eval and metrics outputs.
    Report(Common),
    /// Run every stage in order.
    RunAll(Common),
    /// Print the full default configuration.
    Init,
}

fn parse_mode(s: &str) -> Result<AugmentMode, String> {
    AugmentMode::parse(s).map_err(|e| e.to_string())
}

fn pipeline(c: &Common) -> anyhow::Result<Pipeline> {
    let mut config = match &c.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = c.seed {
        config.seed = seed;
    }
    if let Some(out) = &c.out {
        config.out = out.clone();
    }
    if let Some(jobs) = c.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut p = Pipeline::new(config)?;
    p.force = c.force;
    Ok(p)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (stage, common) = match &cli.command {
        Command::Init => {
            print!("{}", RunConfig::default().to_toml());
            return Ok(());
        }
        Command::RunAll(c) => {
            let p = pipeline(c)?;
            for (stage, mode, outcome) in p.run_all()? {
                let mode = mode.map(|m| format!(" [{m}]")).unwrap_or_default();
                println!("{stage}{mode}: {outcome:?}");
            }
            println!("report written to {}", p.dir(Stage::Report, None).display());
            return Ok(());
        }
        Command::Collect(c) => (Stage::Collect, c),
        Command::TrainDiffusion(c) => (Stage::TrainDiffusion, c),
        Command::TrainCompletion(c) => (Stage::TrainCompletion, c),
        Command::Generate(c) => (Stage::Generate, c),
        Command::Filter(c) => (Stage::Filter, c),
        Command::Augment(c) => (Stage::Augment, c),
        Command::Eval(c) => (Stage::Eval, c),
        Command::Metrics(c) => (Stage::Metrics, c),
        Command::Report(c) => (Stage::Report, c),
    };
    let p = pipeline(common)?;
    for outcome in p.run(stage, common.mode)? {
        println!("{stage}: {outcome:?}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
