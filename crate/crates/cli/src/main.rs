use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use mgp_cli::experiment::run_experiment;
use mgp_cli::{diag::run_diagnostics, load_config, population_functionals, with_workers, RunError};
use mgp_core::rules::mock::{serve, MockConfig};

#[derive(Parser)]
#[command(name = "mgp", version, about = "Martingale posterior coverage studies and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; all cores by default.
    #[arg(long)]
    workers: Option<usize>,
    /// Replace the config's master seed.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Output root; overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Coverage study over every setup and rule.
    Run(Common),
    /// Trace and predictive-drift diagnostics.
    Diag(Common),
    /// Print the population minimizer of every setup as JSON.
    Theta0(Common),
    /// Serve a mock predictive service until killed.
    ServeMock {
        /// Mock behavior (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
    },
}

fn execute(command: Command) -> Result<(), RunError> {
    match command {
        Command::Run(c) => {
            let config = load_config(&c.config, c.seed_override)?;
            let out = c.out.unwrap_or_else(|| config.output_dir.clone());
            let workers = c.workers;
            let report = with_workers(workers, || {
                run_experiment(&config, &out, workers.unwrap_or_else(mgp_core::exec::worker_count))
            })??;
            for row in &report.rows {
                println!(
                    "{} / {}: coverage {:.3}, size median {:.4}, failed trajectories {}",
                    row.setup, row.rule, row.coverage, row.size_median, row.failed_trajectories
                );
            }
            println!("artifacts in {}", report.run_dir.display());
            if !report.runtime_errors.is_empty() {
                for e in &report.runtime_errors {
                    eprintln!("error: {e}");
                }
                return Err(RunError::Runtime(format!("{} repetitions failed", report.runtime_errors.len())));
            }
            Ok(())
        }
        Command::Diag(c) => {
            let config = load_config(&c.config, c.seed_override)?;
            let out = c.out.unwrap_or_else(|| config.output_dir.clone());
            let report = with_workers(c.workers, || run_diagnostics(&config, &out))??;
            for t in &report.traces {
                println!("trace {} / {}: {}", t.setup, t.rule, t.path.display());
            }
            for a in &report.acid {
                println!("acid {} / {}: {}", a.setup, a.rule, a.path.display());
            }
            Ok(())
        }
        Command::Theta0(c) => {
            let config = load_config(&c.config, c.seed_override)?;
            let values = with_workers(c.workers, || population_functionals(&config))??;
            println!("{}", serde_json::to_string_pretty(&values).map_err(|e| RunError::Runtime(e.to_string()))?);
            Ok(())
        }
        Command::ServeMock { .. } => unreachable!("handled in main"),
    }
}

fn serve_mock(config: PathBuf, addr: String) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
    let mock: MockConfig = serde_json::from_str(&text).context("parsing mock config")?;
    let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
    println!("serving on {}", listener.local_addr()?);
    serve(listener, mock, Arc::new(AtomicBool::new(false)))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::ServeMock { config, addr } = cli.command {
        return match serve_mock(config, addr) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
        };
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
