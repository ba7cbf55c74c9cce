//! `frontsteer`: batch driver for the value-function, transport and
//! primal-dual solvers and the certifier.

mod commands;
mod config;
mod failure;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Invocation;
use crate::config::RunConfig;
use crate::failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "frontsteer", version, about = "Obstacle-steered front propagation solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides outputs.directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "FRONTSTEER_THREADS")]
    threads: Option<usize>,
    /// Number of grid halvings.
    #[arg(long, global = true, default_value_t = 0)]
    refine: u32,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Value function for an obstacle.
    SolveHj {
        /// Obstacle field file (overrides problem.obstacle).
        #[arg(long)]
        f: Option<PathBuf>,
    },
    /// Continuity equation for a velocity field.
    SolveTransport {
        /// Velocity field file (overrides transport.velocity).
        #[arg(long)]
        v: Option<PathBuf>,
    },
    /// Primal-dual solve followed by every certification check.
    Optimize,
    /// Certification checks on a stored bundle.
    Certify {
        /// Directory holding u.field, f.field, m.field and w.field.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// The blocking example for several obstacle widths.
    Reproduce,
}

fn run(cli: Cli) -> Result<i32, Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;
    }
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = cli.out {
        config.outputs.directory = out;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let mut inv = Invocation {
        config,
        refine: cli.refine,
        f_file: None,
        v_file: None,
        bundle: None,
    };
    match cli.command {
        Command::SolveHj { f } => {
            inv.f_file = f;
            commands::solve_hj(&inv)
        }
        Command::SolveTransport { v } => {
            inv.v_file = v;
            commands::solve_transport(&inv)
        }
        Command::Optimize => commands::optimize(&inv),
        Command::Certify { bundle } => {
            inv.bundle = bundle;
            commands::certify(&inv)
        }
        Command::Reproduce => commands::reproduce(&inv),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("frontsteer: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
