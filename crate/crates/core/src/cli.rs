//! Command-line front end. Exit codes: 0 success, 1 usage or config error,
//! 2 runtime failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::datasets::{generate, write_csv};
use crate::error::Error;
use crate::harness::run_to_dir;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "kernrep", version, about = "Kernel representation learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write results.csv and aggregate.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds replacing the configured list.
        #[arg(long, value_delimiter = ',')]
        seed_override: Option<Vec<u64>>,
        /// Suppress per-cell progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Write a synthetic dataset as CSV.
    Generate {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Parse and check a config file without running it.
    ValidateConfig { path: PathBuf },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Runs the CLI with explicit argument list and output streams.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    EXIT_CONFIG
                }
            };
        }
    };
    match cli.command {
        Command::ValidateConfig { path } => match ExperimentConfig::load(&path) {
            Ok(cfg) => {
                let cells = crate::harness::cells(&cfg).len();
                let _ = writeln!(stdout, "{}: ok ({} seeds, {cells} cells)", path.display(), cfg.seeds.len());
                EXIT_OK
            }
            Err(e) => {
                let _ = writeln!(stderr, "error: {e}");
                EXIT_CONFIG
            }
        },
        Command::Generate { dataset, out, n, seed } => {
            let ds = match generate(&dataset, n, seed) {
                Ok(ds) => ds,
                Err(e) => {
                    let _ = writeln!(stderr, "error: {e}");
                    return EXIT_CONFIG;
                }
            };
            match write_csv(&ds, &out) {
                Ok(()) => EXIT_OK,
                Err(e) => {
                    let _ = writeln!(stderr, "error: {e}");
                    EXIT_RUNTIME
                }
            }
        }
        Command::Run { config, out, seed_override, quiet } => {
            let mut cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    let _ = writeln!(stderr, "error: {e}");
                    return EXIT_CONFIG;
                }
            };
            if let Some(seeds) = seed_override {
                cfg.seeds = seeds;
                if let Err(e) = cfg.validate() {
                    let _ = writeln!(stderr, "error: {e}");
                    return EXIT_CONFIG;
                }
            }
            let out_dir = out.unwrap_or_else(|| cfg.output.clone());
            let log = Mutex::new(stderr);
            let result = run_to_dir(&cfg, &out_dir, &|outcome| {
                if !quiet {
                    let mut w = log.lock().unwrap_or_else(|p| p.into_inner());
                    let _ = writeln!(w, "{}", outcome.summary());
                }
            });
            let stderr = log.into_inner().unwrap_or_else(|p| p.into_inner());
            match result {
                Ok((run, results, aggregates)) => {
                    let failed = run.records.iter().filter(|r| r.is_failed()).count();
                    let _ = writeln!(
                        stdout,
                        "wrote {} ({} rows, {failed} failed) and {}",
                        results.display(),
                        run.records.len(),
                        aggregates.display()
                    );
                    EXIT_OK
                }
                Err(e) => {
                    let _ = writeln!(stderr, "error: {e}");
                    exit_code(&e)
                }
            }
        }
    }
}
