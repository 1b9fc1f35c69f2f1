//! Command-line driver: configuration parsing, subcommand dispatch, and
//! reproducible artifact emission.
//!
//! Exit codes: 0 = success (and any statistical verdict passed),
//! 2 = the run completed but a statistical verdict failed,
//! 1 = execution error.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Config;

#[derive(Parser)]
#[command(
    name = "shelab",
    version,
    about = "Simulation laboratory for exponentially growing spatial averages \
             of the 1-D stochastic heat equation"
)]
struct Cli {
    /// Flat key=value configuration file (flags override file values).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed (default 0, echoed in the manifest).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Replica count override.
    #[arg(long, global = true)]
    replicas: Option<usize>,

    /// Output directory for artifacts and the manifest.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads (also via SHELAB_WORKERS); defaults to the core count.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one field realisation and dump it (CSV and/or binary).
    Simulate,
    /// Window-integral variance against the exact quadrature oracle.
    VarianceCheck,
    /// Moment growth-rate (Lyapunov exponent) estimation from an ensemble.
    Lyapunov,
    /// Weak law of large numbers trend diagnostic.
    Wlln,
    /// Pathwise strong law of large numbers check.
    Slln,
    /// Central limit theorem trend diagnostic (KS distance).
    Clt,
    /// CLT-failure trend diagnostic (median |F|).
    CltFail,
    /// Coupling error between full and localised solutions over a c-grid.
    Localize,
    /// Interval partition layout (blocks, parity classes, strips).
    Partition,
    /// The lambda-threshold report for a Lyapunov curve.
    Thresholds,
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate => "simulate",
        Command::VarianceCheck => "variance-check",
        Command::Lyapunov => "lyapunov",
        Command::Wlln => "wlln",
        Command::Slln => "slln",
        Command::Clt => "clt",
        Command::CltFail => "clt-fail",
        Command::Localize => "localize",
        Command::Partition => "partition",
        Command::Thresholds => "thresholds",
    }
}

fn resolve_workers(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| {
        std::env::var("SHELAB_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
}

fn run(cli: Cli) -> shelab_core::Result<Option<bool>> {
    if let Some(n) = resolve_workers(cli.workers) {
        // ignore the error if a pool already exists (tests set one up)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }

    let mut cfg = match &cli.config {
        Some(path) => Config::from_file(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set("seed", seed.to_string());
    }
    if let Some(replicas) = cli.replicas {
        cfg.set("replicas", replicas.to_string());
    }

    let out = &cli.out;
    let outcome = match &cli.command {
        Command::Simulate => commands::simulate(&mut cfg, out)?,
        Command::VarianceCheck => commands::variance_check(&mut cfg, out)?,
        Command::Lyapunov => commands::lyapunov(&mut cfg, out)?,
        Command::Wlln => commands::wlln(&mut cfg, out)?,
        Command::Slln => commands::slln(&mut cfg, out)?,
        Command::Clt => commands::clt(&mut cfg, out)?,
        Command::CltFail => commands::clt_fail(&mut cfg, out)?,
        Command::Localize => commands::localize_cmd(&mut cfg, out)?,
        Command::Partition => commands::partition(&mut cfg, out)?,
        Command::Thresholds => commands::thresholds_cmd(&mut cfg, out)?,
    };
    if let Some(pass) = outcome.verdict {
        let name = command_name(&cli.command);
        if pass {
            eprintln!("{name}: verdict PASS");
        } else {
            eprintln!("{name}: verdict FAIL (see report.json)");
        }
    }
    Ok(outcome.verdict)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Some(false)) => ExitCode::from(2),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
