//! `fhn`: command-line experiments for stochastic FitzHugh-Nagumo networks
//! and their kinetic mean-field equation.

mod commands;
mod config;
mod error;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use commands::Outputs;
use config::{FileConfig, Overrides, Resolved};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "fhn", version, about = "Stochastic FitzHugh-Nagumo networks and their mean-field limit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration file; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base random seed (overrides `run.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Model preset: bistable, excitable or weak-coupling.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Log progress at info level (`RUST_LOG` takes precedence).
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Euler-Maruyama simulation of the N-neuron network.
    SimulateParticles,
    /// Time integration of the kinetic equation.
    SolvePde,
    /// Stationary solutions from several seeds, deduplicated.
    FindStationary,
    /// Rightmost spectrum of the linearization around a stationary solution.
    Spectrum,
    /// Mean-square particle/nonlinear-copy distance against N.
    ChaosRate,
    /// Regime classification of the mean voltage over a list of couplings.
    RegimeScan,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::SimulateParticles => "simulate-particles",
            Command::SolvePde => "solve-pde",
            Command::FindStationary => "find-stationary",
            Command::Spectrum => "spectrum",
            Command::ChaosRate => "chaos-rate",
            Command::RegimeScan => "regime-scan",
        }
    }
}

#[derive(Serialize)]
struct OutputEntry {
    file: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: String,
    seed: u64,
    threads: usize,
    wall_time_s: f64,
    config: &'a Resolved,
    outputs: Vec<OutputEntry>,
    summary: Value,
}

fn hash_file(path: &std::path::Path) -> Result<OutputEntry, CliError> {
    let data = std::fs::read(path)?;
    Ok(OutputEntry {
        file: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        bytes: data.len() as u64,
        sha256: Sha256::digest(&data).iter().map(|b| format!("{b:02x}")).collect(),
    })
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let c = &cli.common;
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size the thread pool: {e}")))?;
    }
    let file = match &c.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let over = Overrides {
        preset: c.preset.clone(),
        seed: c.seed,
    };
    let cfg = Resolved::new(file, &over)?;
    let mut out = Outputs::new(&c.out)?;
    log::info!(
        "{} on a {}x{} grid, seed {}, {} threads",
        cli.command.name(),
        cfg.grid.nx,
        cfg.grid.nv,
        cfg.seed,
        rayon::current_num_threads()
    );
    let start = Instant::now();
    let summary = match cli.command {
        Command::SimulateParticles => commands::simulate_particles(&cfg, &mut out),
        Command::SolvePde => commands::solve_pde(&cfg, &mut out),
        Command::FindStationary => commands::find_stationary_cmd(&cfg, &mut out),
        Command::Spectrum => commands::spectrum(&cfg, &mut out),
        Command::ChaosRate => commands::chaos_rate(&cfg, &mut out),
        Command::RegimeScan => commands::regime_scan_cmd(&cfg, &mut out),
    }?;
    let name = cli.command.name();
    let manifest = Manifest {
        command: name,
        version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.hash(name),
        seed: cfg.seed,
        threads: rayon::current_num_threads(),
        wall_time_s: start.elapsed().as_secs_f64(),
        config: &cfg,
        outputs: out.files.iter().map(|p| hash_file(p)).collect::<Result<_, _>>()?,
        summary,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(out.path("manifest.json"), text + "\n")?;
    println!("{}", serde_json::to_string_pretty(&manifest.summary).unwrap_or_default());
    println!("wrote {} files to {}", out.files.len() + 1, out.dir().display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
