//! Command-line front end: `bpire run <spec>` and `bpire list-targets`.

pub mod config;
pub mod report;
pub mod run;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Error;
use crate::mc::{Engine, WORKERS_ENV};

pub use config::{ExperimentSpec, Format};
pub use report::{ExperimentReport, Table};
pub use run::{execute, list_targets};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_REGIME: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "bpire", version, about = "Single-clan survival in branching processes with immigration in random environment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment described by a TOML spec file.
    Run {
        spec: PathBuf,
        /// Output directory, overriding `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed, overriding `master_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Sample count, overriding `n_samples`.
        #[arg(long)]
        samples: Option<usize>,
        /// Worker threads.
        #[arg(long, env = WORKERS_ENV)]
        workers: Option<usize>,
    },
    /// Print every runnable target.
    ListTargets,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Io(_) | Error::InvalidLaw(_) => EXIT_CONFIG,
        Error::WrongRegime { .. } | Error::LatticeLaw | Error::NotSubcritical { .. } | Error::NoBetaRoot => EXIT_REGIME,
        _ => EXIT_NUMERIC,
    }
}

/// Loads a spec and applies the command-line overrides.
pub fn load_spec(path: &std::path::Path, out: Option<PathBuf>, seed: Option<u64>, samples: Option<usize>) -> Result<ExperimentSpec, Error> {
    let mut spec = ExperimentSpec::load(path)?;
    if let Some(o) = out {
        spec.output_dir = o;
    }
    if let Some(s) = seed {
        spec.master_seed = s;
    }
    if let Some(n) = samples {
        spec.n_samples = n;
    }
    Ok(spec)
}

/// Runs the parsed command, printing to stdout/stderr; returns the exit code.
pub fn dispatch(cli: Cli) -> i32 {
    match cli.command {
        Command::ListTargets => {
            print!("{}", list_targets());
            EXIT_PASS
        }
        Command::Run { spec, out, seed, samples, workers } => {
            let result = load_spec(&spec, out, seed, samples).and_then(|spec| {
                let engine = workers.map(Engine::new).unwrap_or_else(Engine::from_env);
                let report = execute(&spec, &engine)?;
                let files = report.write(&spec.output_dir)?;
                Ok((report, files))
            });
            match result {
                Ok((report, files)) => {
                    for (k, v) in &report.flags {
                        println!("{k}: {}", if *v { "pass" } else { "FAIL" });
                    }
                    for f in files {
                        println!("wrote {}", f.display());
                    }
                    if report.pass {
                        EXIT_PASS
                    } else {
                        EXIT_CHECK_FAILED
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_code(&e)
                }
            }
        }
    }
}
