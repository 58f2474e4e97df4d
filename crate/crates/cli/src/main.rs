//! `vmfml` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CliError, OutputLock};
use config::{RunConfig, KEYS};

#[derive(Parser, Debug)]
#[command(
    name = "vmfml",
    version,
    about = "vMF metric learning: train, evaluate, retrieve, cluster, sample"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long, short = 'c', global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable. Overrides win over the file.
    #[arg(long = "set", short = 's', global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for `--set output_dir=DIR`.
    #[arg(long, short = 'o', global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Shorthand for `--set checkpoint=FILE`.
    #[arg(long, global = true, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Log progress to stderr (RUST_LOG also works).
    #[arg(long, short = 'v', global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Train a network with the alternating prototype schedule.
    Train,
    /// Nearest-prototype accuracy of a checkpoint.
    Eval,
    /// Recall@K of a checkpoint's embeddings.
    Retrieve,
    /// Spherical k-means or mixture-of-vMF clustering of embeddings.
    Cluster,
    /// Write `label coord...` lines for every sample.
    Embed,
    /// Draw vMF sample clouds, one file per concentration.
    Sample,
    /// Concentration and prototype-separation diagnostics.
    Diagnose,
    /// List every configuration key with its default.
    Keys,
}

impl Common {
    fn overrides(&self) -> Vec<String> {
        let mut all = self.set.clone();
        if let Some(dir) = &self.output_dir {
            all.push(format!("output_dir={}", dir.display()));
        }
        if let Some(seed) = self.seed {
            all.push(format!("seed={seed}"));
        }
        if let Some(ckpt) = &self.checkpoint {
            all.push(format!("checkpoint={}", ckpt.display()));
        }
        all
    }
}

fn print_keys() {
    for (key, default, help) in KEYS {
        println!("{key:<16} {:<12} {help}", default.unwrap_or("-"));
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Command::Keys = cli.command {
        print_keys();
        return Ok(());
    }
    let cfg = RunConfig::load(cli.common.config.as_deref(), &cli.common.overrides())?;
    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    match cli.command {
        Command::Train => commands::train(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Retrieve => commands::retrieve(&cfg),
        Command::Cluster => commands::cluster(&cfg),
        Command::Embed => commands::embed(&cfg),
        Command::Sample => commands::sample(&cfg),
        Command::Diagnose => commands::diagnose(&cfg),
        Command::Keys => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
