//! `mqrif`: unconditional multivariate M-quantile regression from the
//! command line.

mod commands;
mod error;
mod options;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use error::{CliError, CliResult};
use options::{ConfigFile, ContourArgs, DataArgs, EstimateArgs, GlobalFile, ModelArgs, ReplicationArgs, SimulateArgs};

/// Environment variable holding the default worker count.
const THREADS_ENV: &str = "MQRIF_THREADS";

#[derive(Parser)]
#[command(name = "mqrif", version, about = "Unconditional multivariate M-quantile regression")]
struct Cli {
    /// TOML file with default values for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random draw (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to $MQRIF_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate theta and the RIF covariance matrices.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        est: EstimateArgs,
    },
    /// Unconditional partial effects from the RIF regression.
    Upe {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        est: EstimateArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Cross-validation path of the tuning constant.
    Cv {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        est: EstimateArgs,
    },
    /// Contour vertices over a sweep of directions.
    Contour {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        est: EstimateArgs,
        #[command(flatten)]
        contour: ContourArgs,
    },
    /// Percentile bootstrap intervals for the partial effects.
    Boot {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        est: EstimateArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        rep: ReplicationArgs,
    },
    /// Draw a synthetic dataset.
    Simulate {
        #[command(flatten)]
        sim: SimulateArgs,
    },
    /// Monte Carlo coverage of the asymptotic confidence intervals.
    Coverage {
        #[command(flatten)]
        sim: SimulateArgs,
        #[command(flatten)]
        est: EstimateArgs,
        #[command(flatten)]
        rep: ReplicationArgs,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads(flag: Option<usize>, file: Option<usize>) -> CliResult<()> {
    let env = std::env::var(THREADS_ENV)
        .ok()
        .map(|v| v.parse::<usize>().map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a positive integer"))));
    let threads = match (flag.or(file), env) {
        (Some(n), _) => Some(n),
        (None, Some(n)) => Some(n?),
        (None, None) => None,
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("thread count must be positive".into()));
        }
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let file = ConfigFile::load(cli.config.as_ref())?;
    let globals: GlobalFile = file.group()?;
    configure_threads(cli.threads, globals.threads)?;
    let seed = cli.seed.or(globals.seed).unwrap_or(0);
    match cli.command {
        Command::Fit { data, est } => {
            commands::run_fit(&data.overlay(file.group()?), &est.overlay(file.group()?), seed)
        }
        Command::Upe { data, est, model } => commands::run_upe(
            &data.overlay(file.group()?),
            &est.overlay(file.group()?),
            &model.overlay(file.group()?),
            seed,
        ),
        Command::Cv { data, est } => commands::run_cv(&data.overlay(file.group()?), &est.overlay(file.group()?), seed),
        Command::Contour { data, est, contour } => commands::run_contour(
            &data.overlay(file.group()?),
            &est.overlay(file.group()?),
            &contour.overlay(file.group()?),
            seed,
        ),
        Command::Boot { data, est, model, rep } => commands::run_boot(
            &data.overlay(file.group()?),
            &est.overlay(file.group()?),
            &model.overlay(file.group()?),
            &rep.overlay(file.group()?),
            seed,
        ),
        Command::Simulate { sim } => commands::run_simulate(&sim.overlay(file.group()?), seed),
        Command::Coverage { sim, est, rep, out } => {
            let out = out.or(file.group::<DataArgs>()?.out);
            commands::run_coverage(
                &sim.overlay(file.group()?),
                &est.overlay(file.group()?),
                &rep.overlay(file.group()?),
                out,
                seed,
            )
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
