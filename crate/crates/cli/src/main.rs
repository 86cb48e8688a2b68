//! `sp4d`: train, render and evaluate 4D Gaussian scenes.

mod camera_path;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use sp4d::io::Split;

use config::Config;

#[derive(Parser)]
#[command(name = "sp4d", version, about = "4D Gaussian splatting for dynamic scenes")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides a configuration value, e.g. `--set train.iterations=500`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (0 uses every core).
    #[arg(long, global = true, env = "SP4D_THREADS")]
    threads: Option<usize>,
    /// Seed for training and synthetic scene generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Prints machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trains a cloud on the configured dataset.
    Train,
    /// Renders a checkpoint along a camera path.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Camera path file, one view per line.
        #[arg(long)]
        cameras: PathBuf,
        /// Output directory (defaults to `<output.dir>/render`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Spreads the view timestamps evenly over START..END.
        #[arg(long, num_args = 2, value_names = ["START", "END"], allow_negative_numbers = true)]
        time_range: Option<Vec<f64>>,
    },
    /// Reports PSNR and SSIM of a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// One of all, train, val.
        #[arg(long, default_value = "val")]
        split: Split,
        /// CSV path (defaults to `<output.dir>/eval_<split>.csv`).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compares analytic gradients with finite differences on built-in fixtures.
    CheckGrad {
        /// Corrupts one group's analytic gradient to exercise the gate.
        #[arg(long, hide = true, value_name = "GROUP")]
        inject_fault: Option<String>,
    },
    /// Writes a synthetic dataset, its ground-truth cloud and camera path.
    MakeSynthetic {
        /// Output directory (defaults to `data.path`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("train.seed={seed}"));
        overrides.push(format!("synthetic.seed={seed}"));
    }
    let config = || Config::load(cli.config.as_deref(), &overrides);
    match &cli.command {
        Command::Train => commands::train_cmd(&config()?, cli.json),
        Command::Render {
            checkpoint,
            cameras,
            out,
            time_range,
        } => {
            let range = time_range.as_ref().map(|r| (r[0], r[1]));
            commands::render_cmd(&config()?, checkpoint, cameras, out.as_deref(), range, cli.json)
        }
        Command::Eval { checkpoint, split, csv } => {
            commands::eval_cmd(&config()?, checkpoint, *split, csv.as_deref(), cli.json)
        }
        Command::CheckGrad { inject_fault } => commands::check_grad_cmd(inject_fault.as_deref(), cli.json),
        Command::MakeSynthetic { out } => commands::make_synthetic_cmd(&config()?, out.as_deref(), cli.json),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
