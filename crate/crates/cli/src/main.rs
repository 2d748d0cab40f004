mod config;
mod run;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use covbal_core::synth::{self, Design};

#[derive(Parser)]
#[command(name = "covbal", version, about = "Covariate balancing for observational studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run all six steps non-interactively and write the artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "covbal-out")]
        out: PathBuf,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long, env = "COVBAL_ADDR", default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory for the session store; sessions are kept in memory only when omitted.
        #[arg(long, env = "COVBAL_STORE")]
        store: Option<PathBuf>,
        /// Worker threads for fitting jobs (defaults to the number of CPUs).
        #[arg(long, env = "COVBAL_JOBS")]
        jobs: Option<usize>,
    },
    /// Write a synthetic dataset with a known effect as CSV.
    Simulate {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 2.0)]
        tau: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Assign treatment independently of the confounders (effect zero).
        #[arg(long)]
        null: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, data, out } => run::run(&config, &data, &out),
        Command::Serve { addr, store, jobs } => {
            if let Some(n) = jobs {
                rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker pool")?;
            }
            let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
            eprintln!("covbal listening on http://{addr}");
            rt.block_on(covbal_service::serve(addr, store.as_deref()))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate { n, tau, seed, null, out } => {
            let design = if null { Design::null(n, seed) } else { Design::confounded(n, tau, seed) };
            let csv = synth::to_csv(&synth::generate(&design)?)?;
            match out {
                Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{csv}"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
