//! `dualsup`: synthetic relation extraction experiments with dual supervision.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

#[derive(Parser)]
#[command(name = "dualsup", version, about = "Dual-supervision relation extraction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML file with flat `key = value` settings
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: config::Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a knowledge base and the four labeled splits
    Gen(Common),
    /// Train a model and write a checkpoint plus history CSV
    Train(Common),
    /// Score a split with a checkpoint; write metrics, PR and group CSVs
    Eval(Common),
    /// Per-relation inflation report and distribution fits
    Bias(Common),
    /// Check the closed-form HA-Net gradient against autodiff
    Gradcheck(Common),
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let (name, common) = match cli.command {
        Command::Gen(c) => ("gen", c),
        Command::Train(c) => ("train", c),
        Command::Eval(c) => ("eval", c),
        Command::Bias(c) => ("bias", c),
        Command::Gradcheck(c) => ("gradcheck", c),
    };
    let s = config::load(common.config.as_deref(), common.flags)?;
    eprintln!("# dualsup {name}: effective configuration\n{}", s.to_toml());
    match name {
        "gen" => commands::gen(&s)?,
        "train" => commands::train_cmd(&s)?,
        "eval" => commands::eval(&s)?,
        "bias" => commands::bias(&s)?,
        _ => return commands::gradcheck(&s),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
