use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use vts_cli::{cmd_eval, cmd_gen_data, cmd_render, cmd_spot, cmd_train, RunConfig};

#[derive(Parser)]
#[command(name = "vts", about = "Video text detection, tracking and recognition", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; defaults apply for missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path).context("loading config")?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with exact ground truth.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        n_train: usize,
        #[arg(long, default_value_t = 20)]
        n_val: usize,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train on a generated dataset.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured step count.
        #[arg(long)]
        steps: Option<usize>,
        /// Continue from a checkpoint written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the validation split of a dataset.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured track threshold.
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Spot a directory of PPM frames into a JSONL trajectory file.
    Spot {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Draw trajectories onto frames.
    Render {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::GenData {
            config,
            out,
            n_train,
            n_val,
            force,
        } => {
            let config = config.load()?;
            cmd_gen_data(&config, n_train, n_val, &out, force)?;
            println!("dataset with {n_train} train / {n_val} val clips at {}", out.display());
        }
        Command::Train {
            config,
            data,
            out,
            steps,
            resume,
        } => {
            let mut config = config.load()?;
            if let Some(steps) = steps {
                config.train.steps = steps;
            }
            config.validate()?;
            let summary = cmd_train(&config, &data, &out, resume.as_deref())?;
            println!(
                "trained {} steps, loss {:.4} -> {:.4}, checkpoint {}",
                summary.steps_run,
                summary.initial_loss,
                summary.final_loss,
                summary.checkpoint.display()
            );
        }
        Command::Eval {
            config,
            checkpoint,
            data,
            out,
            tau,
        } => {
            let config = config.load()?;
            let tau = tau.unwrap_or(config.tau);
            let report = cmd_eval(
                &checkpoint,
                &data,
                &out,
                tau,
                Some(config.model.alphabet.as_str()),
            )?;
            print!("{}", report.table());
        }
        Command::Spot {
            config,
            checkpoint,
            frames,
            out,
            tau,
        } => {
            let config = config.load()?;
            cmd_spot(&checkpoint, &frames, &out, tau.unwrap_or(config.tau))?;
            println!("trajectories written to {}", out.display());
        }
        Command::Render {
            frames,
            trajectories,
            out,
            force,
        } => {
            cmd_render(&frames, &trajectories, &out, force)?;
            println!("rendered frames written to {}", out.display());
        }
    }
    Ok(())
}
