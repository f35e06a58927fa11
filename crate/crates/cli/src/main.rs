use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fgkf::cli::{exit_code, run, Command, RunConfig};

#[derive(Parser)]
#[command(name = "fgkf", version, about = "Domain-adaptive sequence labeling with fine-grained knowledge fusion")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// `key = value` config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides one key; repeatable.
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on column corpora (`source`, `target_train`, `target_dev`).
    Train(Common),
    /// Score a checkpoint on `target_test`.
    Evaluate(Common),
    /// Generate a synthetic two-domain corpus.
    Synth(Common),
    /// Write per-token relevance and fusion weights for `input`.
    RelevanceDump(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Train(c) => (Command::Train, c),
        Cmd::Evaluate(c) => (Command::Evaluate, c),
        Cmd::Synth(c) => (Command::Synth, c),
        Cmd::RelevanceDump(c) => (Command::RelevanceDump, c),
    };
    let result = RunConfig::load(command, &common.out, common.config.as_deref(), &common.sets)
        .and_then(|cfg| run(&cfg));
    match result {
        Ok(summary) => {
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            for m in &summary.messages {
                println!("{m}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
