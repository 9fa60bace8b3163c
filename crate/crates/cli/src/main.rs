mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use icc_core::{ErrorKind, IccError};

use crate::commands::{execute, Manifest};
use crate::config::{CommandKind, RunArgs, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "icc", version, about = "Market-state clustering and forecasting with sparse inverse covariances")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "ICC_JOBS")]
    jobs: Option<usize>,
    /// Re-run the configuration recorded in a manifest.json.
    #[arg(long)]
    from_manifest: Option<PathBuf>,
    /// Output directory when re-running from a manifest.
    #[arg(long, requires = "from_manifest")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, clap::Subcommand)]
enum Command {
    /// Segment a panel into market states.
    Cluster(RunArgs),
    /// Fit on a training split and forecast next-day states on the rest.
    Forecast(RunArgs),
    /// Repeat an experiment over random sub-baskets of tickers.
    Resample(RunArgs),
    /// Write a synthetic two-regime price panel and its true labels.
    Synth(RunArgs),
}

fn exit_code(err: &IccError) -> u8 {
    match err.kind() {
        ErrorKind::Config => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

fn resolve(cli: &Cli) -> Result<(RunConfig, PathBuf), IccError> {
    if let Some(path) = &cli.from_manifest {
        if cli.command.is_some() {
            return Err(IccError::Config("--from-manifest cannot be combined with a subcommand".into()));
        }
        let manifest = Manifest::read(path)?;
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("icc-out"));
        return Ok((manifest.config, out));
    }
    let (kind, args) = match &cli.command {
        Some(Command::Cluster(a)) => (CommandKind::Cluster, a),
        Some(Command::Forecast(a)) => (CommandKind::Forecast, a),
        Some(Command::Resample(a)) => (CommandKind::Resample, a),
        Some(Command::Synth(a)) => (CommandKind::Synth, a),
        None => return Err(IccError::Config("a subcommand or --from-manifest is required".into())),
    };
    RunConfig::resolve(kind, args)
}

fn run(cli: &Cli) -> Result<String, IccError> {
    let (cfg, out) = resolve(cli)?;
    match cli.jobs {
        Some(0) => Err(IccError::Config("--jobs must be positive".into())),
        Some(jobs) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| IccError::Config(format!("cannot start {jobs} workers: {e}")))?;
            pool.install(|| execute(&cfg, &out))
        }
        None => execute(&cfg, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(&cli) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
