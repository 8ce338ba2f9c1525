//! Command-line front end: one JSON config, one subcommand per invocation.

pub mod acceptance;
pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Failure;
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "slabdecay", version, about = "Decay rates of the linearized free-boundary Stokes slab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// run configuration (JSON); defaults apply when omitted
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// output directory, overrides `output_dir`
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// worker threads for per-frequency work
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// overrides `seed`
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// root sweep over `dispersion.moduli`
    Dispersion,
    /// one per-mode time integration
    Evolve,
    /// total energy on the torus or the plane
    Synthesize,
    /// the acceptance suite
    Verify,
    /// dispersion root, time-domain rate and envelope per modulus
    Sweep,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

fn load(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let cfg = load(cli)?;
    if let Some(j) = cli.jobs {
        // only the first call in a process can size the global pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global();
    }
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| anyhow::anyhow!("cannot create {}: {e}", cfg.output_dir.display()))?;
    let out = cfg.output_dir.clone();
    match cli.command {
        Command::Dispersion => commands::dispersion(&cfg, &out),
        Command::Evolve => commands::evolve(&cfg, &out),
        Command::Synthesize => commands::synthesize(&cfg, &out),
        Command::Verify => commands::verify(&cfg, &out),
        Command::Sweep => commands::sweep(&cfg, &out),
    }
}

/// Runs one invocation and returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Acceptance(n)) => {
            eprintln!("error: {n} acceptance criteria failed");
            EXIT_FAILED
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
    }
}
