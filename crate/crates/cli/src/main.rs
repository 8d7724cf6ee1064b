use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fracdrift::experiment::{read_manifest, render_report, run, write_run, ExperimentConfig};
use fracdrift::Error;

/// Exit status when every non-surrogate check passes.
const OK: u8 = 0;
/// Some checks ran and failed.
const CHECK_FAILED: u8 = 1;
/// The configuration was rejected before any check ran.
const CONFIG_ERROR: u8 = 2;
/// A run could not be completed or its outputs could not be written.
const RUNTIME_ERROR: u8 = 3;

#[derive(Parser)]
#[command(name = "fracdrift", version, about = "Drifted fractional heat kernels: series, envelopes and Monte Carlo checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the checks of a JSON configuration.
    Run {
        config: PathBuf,
        /// Worker threads; results do not depend on it.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Output directory (default: FRACDRIFT_OUT, then the config's output_dir, then ./runs).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the report table of a finished run.
    Report {
        /// A run directory or a manifest file.
        dir: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => CONFIG_ERROR,
        _ => RUNTIME_ERROR,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, workers, out } => cmd_run(config, workers, out),
        Command::Report { dir } => cmd_report(dir),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("fracdrift: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn cmd_run(config: PathBuf, workers: usize, out: Option<PathBuf>) -> fracdrift::Result<u8> {
    if workers == 0 {
        return Err(Error::config("--workers", "need at least one worker"));
    }
    let cfg = ExperimentConfig::load(&config)?;
    let dir = out
        .or_else(|| std::env::var_os("FRACDRIFT_OUT").map(PathBuf::from))
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Unsupported(format!("thread pool: {e}")))?;
    let output = pool.install(|| run(&cfg))?;
    let path = write_run(&output, &dir)?;
    print!("{}", render_report(&output.manifest));
    println!("manifest: {}", path.display());
    Ok(if output.manifest.failures().is_empty() { OK } else { CHECK_FAILED })
}

fn cmd_report(dir: PathBuf) -> fracdrift::Result<u8> {
    let m = read_manifest(&dir)?;
    print!("{}", render_report(&m));
    Ok(if m.failures().is_empty() { OK } else { CHECK_FAILED })
}
