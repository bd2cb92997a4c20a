//! `lmfg`: batch runner for the levy-mfg solvers.
//!
//! Exit codes: 0 all verdicts pass, 1 a verdict failed, 2 config error,
//! 3 solver failure (artifacts written so far are kept), 4 budget exceeded.

mod config;
mod report;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use report::Artifacts;

#[derive(Parser, Debug)]
#[command(name = "lmfg", version, about = "Mean field games driven by Levy diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for randomized probes; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Treat warnings as failures.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
pub enum Command {
    /// Heat kernels and the derivative decay check.
    Kernel,
    /// Backward HJB solve with a terminal profile.
    Hjb,
    /// Forward Fokker-Planck solve with a prescribed drift.
    Fp,
    /// Coupled fixed point.
    Mfg,
    /// Linearized system around the equilibrium.
    Linsys,
    /// Measure derivative, residual and restart checks.
    Master,
    /// Monotonicity validators for the couplings and the Hamiltonian.
    Check,
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Io(String),
    Solver(String),
    Budget(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) | Failure::Io(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Budget(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Io(m) | Failure::Solver(m) | Failure::Budget(m) => m,
        }
    }
}

fn execute(cli: &Cli) -> Result<bool, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Config("--config is required".into()))?;
    let cfg = RunConfig::load(path)?;
    let grid = cfg.grid()?;
    let seed = cfg.seed(cli.seed);
    let out = cli.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out").join(&cfg.scenario));
    let ctx = run::Context { cfg, grid, seed };
    run::preflight(&ctx)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure::Config(format!("--threads: {e}")))?;
    }
    let mut art = Artifacts::new(out)?;
    art.json("config.json", &serde_json::json!({ "command": format!("{:?}", cli.command).to_lowercase(), "seed": seed }))?;
    run::run(cli.command, &ctx, &mut art)?;
    art.finish(cli.strict)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
