//! `tense`: grid evaluation, sequential design, sampling and diagnostics for
//! torn-embedding emulators, driven by a JSON configuration.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Context;
use crate::config::Resolved;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "tense", version, about = "Emulate 2-D functions with partial discontinuities")]
struct Cli {
    /// Worker threads for grid and matrix assembly.
    #[arg(long, env = "TENSE_THREADS", global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,

    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Random seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Adjusted mean and SD on a regular grid: grid.csv, grid_report.json.
    EvalGrid {
        #[command(flatten)]
        common: Common,
        /// Also write full-precision grid.bin.
        #[arg(long)]
        binary: bool,
    },
    /// One wave of sequential design: design_wave<N>.csv and .json.
    Design {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        wave: usize,
    },
    /// Joint realizations from the adjusted emulator: samples.csv.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// LOO, MLE, PSD sweep and the geodesic counter-example: report.json.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::EvalGrid { common, .. }
            | Command::Design { common, .. }
            | Command::Sample { common, .. }
            | Command::Report { common } => common,
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let common = cli.command.common();
    let res = Resolved::from_path(&common.config)?;
    let ctx = Context {
        out: commands::output_dir(&res, common.out.as_deref()),
        seed: common.seed.unwrap_or(res.config.seed),
        res,
    };
    match cli.command {
        Command::EvalGrid { binary, .. } => commands::eval_grid(&ctx, binary),
        Command::Design { wave, .. } => commands::design(&ctx, wave),
        Command::Sample { count, .. } => commands::sample(&ctx, count),
        Command::Report { .. } => commands::report(&ctx),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tense: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
