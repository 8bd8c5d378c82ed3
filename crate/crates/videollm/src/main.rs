use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use videollm::commands;
use videollm::config::RunConfig;
use videollm::parallel::with_threads;
use videollm::{CliError, Result};

#[derive(Parser, Debug)]
#[command(name = "videollm", version, about = "Streaming video sequence reasoning on synthetic event streams")]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the model and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel work.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset.
    Synth,
    /// Train, save a checkpoint and evaluate it.
    Train,
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Stream a feature file through a checkpoint, one JSON line per unit.
    Stream {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
    },
    /// Check analytic gradients against finite differences.
    Gradcheck,
    /// Compare incremental and full-recompute inference.
    Bench {
        #[arg(long, default_value_t = 512)]
        units: usize,
    },
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match &cli.command {
        Command::Synth => commands::cmd_synth(&config(cli)?, &cli.out, &mut out).map(drop),
        Command::Train => commands::cmd_train(&config(cli)?, &cli.out, &mut out).map(drop),
        Command::Eval { checkpoint } => {
            let cfg = config(cli)?;
            let path = checkpoint
                .clone()
                .or_else(|| cfg.paths.checkpoint.clone())
                .ok_or_else(|| CliError::config("paths.checkpoint", "eval needs --checkpoint or paths.checkpoint"))?;
            commands::cmd_eval(&cfg, &path, &cli.out, &mut out).map(drop)
        }
        Command::Stream { checkpoint, features } => commands::cmd_stream(checkpoint, features, &mut out).map(drop),
        Command::Gradcheck => commands::cmd_gradcheck(&mut out).map(drop),
        Command::Bench { units } => commands::cmd_bench(&config(cli)?, *units, &mut out).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = with_threads(cli.threads, || run(&cli));
    let _ = std::io::stdout().flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
