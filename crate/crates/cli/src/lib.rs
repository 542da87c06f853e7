//! Command-line front end for hierarchical ICD-10 coding.

pub mod commands;
pub mod config;
pub mod workflow;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "hicd", version, about = "Hierarchical sentence-level ICD-10 coding")]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus and its embedding table.
    GenSynthetic(commands::GenSyntheticArgs),
    /// Train the sentence tagger, the ICD classifier or the baseline.
    Train(commands::TrainArgs),
    /// Predict codesets for every report of a corpus.
    Predict(commands::PredictArgs),
    /// Score predictions against a gold corpus.
    Evaluate(commands::EvaluateArgs),
    /// Check gradients and metrics against independent references.
    Selftest(commands::SelftestArgs),
}

/// Exit status for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(e: &hicd_core::Error) -> ExitCode {
    if e.is_config() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

pub fn run(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::GenSynthetic(a) => commands::gen_synthetic_cmd(a).map(|_| ExitCode::SUCCESS),
        Command::Train(a) => commands::train_cmd(a).map(|_| ExitCode::SUCCESS),
        Command::Predict(a) => commands::predict_cmd(a).map(|_| ExitCode::SUCCESS),
        Command::Evaluate(a) => commands::evaluate_cmd(a).map(|_| ExitCode::SUCCESS),
        Command::Selftest(a) => commands::selftest_cmd(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        exit_code(&e)
    })
}
