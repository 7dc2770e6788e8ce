//! `dsc`: build simplex centers, generate data, train, evaluate and embed.
//!
//! Exit codes: 0 success, 2 configuration or format error, 3 training diverged.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use dsc_core::datakit::BlobSpec;
use dsc_core::DscError;

use crate::config::{Precision, RunConfig};

#[derive(Parser)]
#[command(name = "dsc", version, about = "Simplex-center classifier toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write simplex centers as CSV, one row per center.
    Simplex {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = dsc_core::simplex::DEFAULT_RADIUS)]
        radius: f64,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a Gaussian-blob dataset as CSV.
    GenData {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        dim: usize,
        /// One count, or a comma-separated count per class.
        #[arg(long, value_delimiter = ',', required = true)]
        samples_per_class: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides train.seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "run")]
        out_dir: PathBuf,
        /// Include wall-clock seconds in the training log.
        #[arg(long)]
        timings: bool,
    },
    /// Evaluate trained checkpoints; open-set runs take one per trial, in order.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Report path; defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the class-mean distance matrix as CSV.
        #[arg(long)]
        distance_csv: Option<PathBuf>,
    },
    /// Write per-sample features, predicted label and open-set score as CSV.
    Embed {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labeled CSV to embed instead of the configured data.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

macro_rules! with_precision {
    ($cfg:expr, $f:ident($($arg:expr),*)) => {
        match $cfg.precision {
            Precision::F32 => commands::$f::<f32>($($arg),*),
            Precision::F64 => commands::$f::<f64>($($arg),*),
        }
    };
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simplex {
            classes,
            dim,
            radius,
            out,
        } => commands::simplex(classes, dim, radius, out.as_deref()),
        Command::GenData {
            classes,
            dim,
            samples_per_class,
            sigma,
            seed,
            out,
        } => {
            let spec = BlobSpec::new(classes, dim, 0, sigma, seed).with_counts(samples_per_class);
            commands::gen_data(&spec, &out)
        }
        Command::Train {
            config,
            seed,
            out_dir,
            timings,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let args = commands::TrainArgs {
                seed: cfg.train.seed,
                out_dir: &out_dir,
                timings,
            };
            with_precision!(cfg, train(&cfg, &args))
        }
        Command::Eval {
            config,
            checkpoints,
            seed,
            out,
            distance_csv,
        } => {
            let cfg = RunConfig::load(&config)?;
            let args = commands::EvalArgs {
                seed: seed.unwrap_or(cfg.train.seed),
                checkpoints: &checkpoints,
                out: out.as_deref(),
                distance_csv: distance_csv.as_deref(),
            };
            with_precision!(cfg, eval(&cfg, &args))
        }
        Command::Embed {
            config,
            checkpoint,
            data,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let args = commands::EmbedArgs {
                checkpoint: &checkpoint,
                data: data.as_deref(),
                out: out.as_deref(),
            };
            with_precision!(cfg, embed_cmd(&cfg, &args))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let diverged = err
        .chain()
        .any(|e| matches!(e.downcast_ref::<DscError>(), Some(DscError::Diverged { .. })));
    if diverged {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
