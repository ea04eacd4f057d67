use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use log::{error, info, warn};
use lowrank_kinetics::config::{ExperimentConfig, Overrides};
use lowrank_kinetics::runner;

/// Run a low-rank kinetic experiment described by a TOML file.
#[derive(Parser, Debug)]
#[command(name = "lrk", version)]
struct Cli {
    /// Experiment TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out` in the file).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Time step. BGK runs take it in units of tau_R.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    rank: Option<usize>,
    /// Basis modes per dimension (odd).
    #[arg(long)]
    q_modes: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = match ExperimentConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            error!("{e}");
            return ExitCode::from(1);
        }
    };
    cfg.apply(&Overrides {
        out: cli.out,
        workers: cli.workers,
        seed: cli.seed,
        steps: cli.steps,
        dt: cli.dt,
        rank: cli.rank,
        q_modes: cli.q_modes,
    });
    match runner::run(&cfg) {
        Ok(o) if o.converged => {
            info!("wrote {}", o.out_dir.display());
            ExitCode::SUCCESS
        }
        Ok(o) => {
            warn!("some steps did not converge, see {}", o.out_dir.join("manifest.json").display());
            ExitCode::from(2)
        }
        Err(e @ lowrank_kinetics::Error::Config(_)) | Err(e @ lowrank_kinetics::Error::InvalidParameter(_)) => {
            error!("{e}");
            ExitCode::from(1)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(3)
        }
    }
}
