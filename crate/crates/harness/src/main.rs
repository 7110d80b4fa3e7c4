use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use zovr_core::{Result, Trace};
use zovr_harness::config::load_config;
use zovr_harness::rates::RateReport;
use zovr_harness::run::{certify_config, exit_code, replay_dir, run_experiment};

#[derive(Parser)]
#[command(name = "zovr", version, about = "Zeroth-order variance-reduced optimization experiments")]
struct Cli {
    /// Override the optimizer seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the worker count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its run directory.
    Run { config: PathBuf },
    /// Print the analysis certificate for a configuration.
    Certify { config: PathBuf },
    /// Verify the update log of a simulated run directory.
    Replay { logdir: PathBuf },
    /// Fit convergence rates on trace CSV files.
    Rates {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
}

fn load(cli: &Cli, path: &Path) -> Result<zovr_harness::config::ExperimentConfig> {
    let mut cfg = load_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(zovr_core::Error::Config("--threads must be at least 1".into()));
        }
        cfg.threads = threads;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    let root = std::env::var_os("ZOVR_OUT").map(PathBuf::from);
    match &cli.command {
        Command::Run { config } => {
            let cfg = load(cli, config)?;
            let outcome = run_experiment(&cfg, root.as_deref())?;
            if let Some(last) = outcome.trace.last() {
                println!(
                    "{}: f = {}, grad_norm_sq = {}, evals = {}, output in {}",
                    cfg.algorithm.name(),
                    last.f,
                    last.grad_norm_sq,
                    outcome.evals,
                    outcome.out_dir.display()
                );
            }
        }
        Command::Certify { config } => {
            let cfg = load(cli, config)?;
            print!("{}", certify_config(&cfg)?.to_text());
        }
        Command::Replay { logdir } => {
            print!("{}", replay_dir(logdir)?.to_text());
        }
        Command::Rates { traces } => {
            for path in traces {
                let trace = Trace::load_csv(path)?;
                print!("{}", RateReport::from_trace(&path.display().to_string(), &trace).to_text());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("zovr: error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
