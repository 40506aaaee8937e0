mod commands;
mod config;
mod error;
mod repro;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Run;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "sma", version, about = "Edge detection experiments on noisy filtered backprojections")]
struct Cli {
    /// TOML experiment file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Reconstruct every replicate instead of using influence weights.
    #[arg(long, global = true)]
    force_direct_path: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean and noisy sinograms.
    Simulate,
    /// Local patch, normal profile and optional full image.
    Recon,
    /// Null covariance, edge vector and admissibility at the edge point.
    CovReport,
    /// One 1D test on a null and an edge replicate.
    Test1d,
    /// One 2D test on a null and an edge replicate.
    Test2d,
    /// Monte Carlo histograms, ROC curves and Gaussianity checks.
    Roc,
    /// Theoretical 1D and 2D power over the sweep's noise levels.
    PowerCurve,
    /// Direction density and coverage.
    UqDirection,
    /// Magnitude density and coverage.
    UqMagnitude,
    /// Sliding-window edge map over a reconstructed frame.
    Scan,
    /// Canned figure runs; `all` runs every figure.
    Repro { figure: String },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let run = Run::new(cfg, out, cli.force_direct_path)?;
    match cli.command {
        Command::Simulate => commands::simulate(&run),
        Command::Recon => commands::recon(&run),
        Command::CovReport => commands::cov_report(&run),
        Command::Test1d => commands::test1d(&run),
        Command::Test2d => commands::test2d(&run),
        Command::Roc => commands::roc(&run),
        Command::PowerCurve => commands::power_curve(&run),
        Command::UqDirection => commands::uq_direction(&run),
        Command::UqMagnitude => commands::uq_magnitude(&run),
        Command::Scan => commands::scan(&run),
        Command::Repro { figure } => repro::repro(&run, &figure),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
