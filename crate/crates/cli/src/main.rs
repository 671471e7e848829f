//! `imu-stride`: generate synthetic IMU data, segment strides, pretrain,
//! train, evaluate and measure distance.

mod commands;
mod config;
mod dataset;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{RunConfig, PROFILES};
use error::CliError;

/// Stride length estimation from foot-mounted IMU data.
///
/// Hyperparameters come from a built-in profile (`tiny`, `desk`, `full`)
/// plus an optional TOML config file; flags only choose paths, seeds and
/// modes. On failure a single line `error[<code>]: <message>` goes to stderr
/// and the exit code is 1 (2 for usage errors).
#[derive(Debug, Parser)]
#[command(name = "imu-stride", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML config file overriding the profile; unknown keys are rejected.
    #[arg(long, global = true, env = "IMU_STRIDE_CONFIG")]
    config: Option<PathBuf>,
    /// Built-in profile: tiny (seconds), desk (minutes), full (default network, long schedule).
    #[arg(long, global = true, value_parser = PROFILES)]
    profile: Option<String>,
    /// Seed for data generation and training; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset directory [default: imu-stride-run/data].
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Checkpoint directory [default: imu-stride-run/checkpoints].
    #[arg(long, global = true)]
    checkpoint_dir: Option<PathBuf>,
    /// Report directory [default: imu-stride-run/reports].
    #[arg(long, global = true)]
    report_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic labeled, unlabeled and track recordings with
    /// their stride files, and print the dataset summary.
    Generate,
    /// Detect strides in a recording CSV and write a boundary file.
    Segment {
        /// Recording CSV.
        #[arg(long)]
        input: PathBuf,
        /// Reference boundary file; prints the detection recall against it.
        #[arg(long)]
        boundaries: Option<PathBuf>,
        /// Output boundary file [default: <report-dir>/segments/<stem>.strides].
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train the reconstruction pretext task on the unlabeled recordings.
    Pretrain,
    /// Train stride length regression and run/walk classification on all
    /// labeled recordings.
    Train(InitFlag),
    /// Subject-independent k-fold evaluation.
    Eval(InitFlag),
    /// Total distance of a recording with the trained model.
    Distance {
        /// Recording CSV; a sibling `.strides` file with lengths gives the
        /// reference distance [default: <data-dir>/track/track.csv].
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        init: InitFlag,
    },
}

#[derive(Debug, Args)]
struct InitFlag {
    /// Start from random weights instead of the pretext checkpoint.
    #[arg(long)]
    no_pretrain: bool,
}

fn resolve(g: &Global) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(g.config.as_deref(), g.profile.as_deref())?;
    if let Some(seed) = g.seed {
        cfg.train.seed = seed;
    }
    for (slot, flag) in [
        (&mut cfg.data_dir, &g.data_dir),
        (&mut cfg.checkpoint_dir, &g.checkpoint_dir),
        (&mut cfg.report_dir, &g.report_dir),
    ] {
        if let Some(p) = flag {
            *slot = p.clone();
        }
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let cfg = resolve(&cli.global)?;
    match &cli.command {
        Command::Generate => commands::generate(&cfg),
        Command::Segment { input, boundaries, output } => commands::segment(input, boundaries.as_deref(), output.as_deref(), &cfg),
        Command::Pretrain => commands::pretrain(&cfg),
        Command::Train(f) => commands::train(&cfg, !f.no_pretrain),
        Command::Eval(f) => commands::eval(&cfg, !f.no_pretrain),
        Command::Distance { input, init } => commands::distance(&cfg, input.as_deref(), !init.no_pretrain),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.one_line());
            ExitCode::FAILURE
        }
    }
}
