use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, ValueEnum};
use miir_cli::{run, Command, RunConfig};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    Synth,
    Prep,
    Train,
    Eval,
    Impute,
    DumpAttn,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Synth => Command::Synth,
            Cmd::Prep => Command::Prep,
            Cmd::Train => Command::Train,
            Cmd::Eval => Command::Eval,
            Cmd::Impute => Command::Impute,
            Cmd::DumpAttn => Command::DumpAttn,
        }
    }
}

/// MIIR sequential recommender: synthesise, prepare, train, evaluate.
#[derive(Debug, Parser)]
#[command(name = "miir", version)]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    /// Configuration file (`key = value` lines under `[section]` headers).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Master seed; overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Per-key override, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let cfg = RunConfig::load(args.config.as_deref(), &args.set, args.seed)?;
    let digest = miir::seed::seed_digest(cfg.seed);
    for path in run(args.command.into(), &cfg, &args.out)? {
        println!("{}\tseed {} digest {}", path.display(), cfg.seed, digest);
    }
    Ok(())
}
