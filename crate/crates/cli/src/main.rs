//! Command-line entry point: generate data, run the training sweep,
//! probe checkpoints, and emit report tables.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use detangle::config::ExperimentConfig;
use detangle::error::CliError;
use detangle::{report, runner};

#[derive(Parser)]
#[command(
    name = "detangle",
    about = "Multitask audio-visual emotion/speaker training with adversarial embedding disentanglement",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the output directory from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the dataset path from the config.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Override the dataset seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl CommonOpts {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = ExperimentConfig::load(self.config.as_deref())?;
        if let Some(out) = &self.out {
            cfg.paths.out = out.clone();
        }
        if let Some(dataset) = &self.dataset {
            cfg.paths.dataset = dataset.clone();
        }
        if let Some(seed) = self.seed {
            cfg.synthetic.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset file.
    GenData {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run the training sweep (strategies x speaker dims x seeds).
    Train {
        #[command(flatten)]
        common: CommonOpts,
        /// Parallel workers (default: config value).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Evaluate existing checkpoints with probe classifiers.
    Probe {
        #[command(flatten)]
        common: CommonOpts,
        /// Re-evaluate cells that already have an eval record.
        #[arg(long)]
        force: bool,
    },
    /// Emit summary tables and significance tests from completed cells.
    Report {
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn run() -> Result<(), CliError> {
    let cli = Cli::try_parse().map_err(|e| {
        // clap prints its own help/usage text.
        let _ = e.print();
        CliError::Config(String::new())
    })?;
    match cli.command {
        Command::GenData { common } => runner::cmd_gen_data(&common.load()?),
        Command::Train { common, workers } => {
            let cfg = common.load()?;
            let workers = workers.unwrap_or(cfg.train.workers);
            let ran = runner::cmd_train(&cfg, workers)?;
            println!("sweep complete ({ran} cells ran)");
            Ok(())
        }
        Command::Probe { common, force } => {
            let cfg = common.load()?;
            let n = runner::cmd_probe(&cfg, force)?;
            println!("probed {n} cells");
            Ok(())
        }
        Command::Report { common } => report::cmd_report(&common.load()?),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let msg = err.to_string();
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(err.exit_code())
        }
    }
}
