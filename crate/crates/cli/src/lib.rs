//! `ldct`: simulate, reconstruct, evaluate and verify from one config file.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod png;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use ldct_core::diagnostics::Suite;

use crate::commands::{Context, ReconMethod};
use crate::config::Config;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "ldct", version, about = "Low-dose CT simulation and reconstruction")]
pub struct Cli {
    /// TOML configuration; defaults apply to every key it omits.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for independent inputs and inner loops. Outputs do
    /// not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Phantom, clean sinogram and one noisy sinogram per dose level.
    Simulate {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides `dose.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the phantom as a windowed 8-bit PNG.
        #[arg(long)]
        png: bool,
    },
    /// Reconstruct each sinogram; iterative methods also write a trace CSV.
    Reconstruct {
        #[arg(long, value_enum, default_value = "elda")]
        method: ReconMethod,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Filter-bank preset name or bank file; overrides `filters.bank`.
        #[arg(long)]
        filters: Option<String>,
        /// Also write each reconstruction as a windowed 8-bit PNG.
        #[arg(long)]
        png: bool,
        /// Sinogram tensors (`.bin` with its `.json` sidecar).
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// PSNR and SSIM of each image against a reference, with mean and std.
    Evaluate {
        /// Reference image tensor.
        #[arg(long)]
        reference: PathBuf,
        /// Directory for `quality.csv`; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Run property suites: adjoint, gradients, descent, smoothing, noise.
    Verify {
        /// Suites to run; all of them if none is given.
        suites: Vec<String>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Directory for `verify.json` and a manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Configuration utilities.
    Config {
        /// Print every key with its default value.
        #[arg(long)]
        dump_defaults: bool,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    match &cli.command {
        Command::Simulate { seed: Some(s), .. } => config.dose.seed = *s,
        Command::Reconstruct { filters: Some(f), .. } => config.filters.bank = f.clone(),
        _ => {}
    }
    if cli.jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker threads: {e}")))?;
    let ctx = Context {
        config,
        config_path: cli.config.clone(),
        pool,
    };
    match &cli.command {
        Command::Simulate { out, png, .. } => commands::simulate(&ctx, out, *png),
        Command::Reconstruct {
            method, out, png, inputs, ..
        } => commands::reconstruct(&ctx, inputs, *method, out, *png),
        Command::Evaluate { reference, out, images } => commands::evaluate(&ctx, reference, images, out.as_deref()),
        Command::Verify { suites, seed, out } => {
            let suites = if suites.is_empty() {
                Suite::ALL.to_vec()
            } else {
                suites
                    .iter()
                    .map(|s| s.parse::<Suite>().map_err(CliError::from))
                    .collect::<Result<Vec<_>, _>>()?
            };
            commands::verify(&ctx, &suites, *seed, out.as_deref())
        }
        Command::Config { dump_defaults } => {
            if *dump_defaults {
                print!("{}", Config::default().to_toml());
            } else {
                print!("{}", ctx.config.to_toml());
            }
            Ok(())
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
