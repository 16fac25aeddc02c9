//! `dtnt`: synthesize data, train and evaluate Dense-TNT models, fog images,
//! check gradients and render result tables.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or
//! configuration errors. Failures print a single `error[<category>]: ...`
//! line on stderr.

mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::Result;

#[derive(Parser, Debug)]
#[command(name = "dtnt", version, about = "Dense-TNT vehicle classifier toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by configurable subcommands.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// `key = value` file; `#` starts a comment.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one key, applied after the config file and flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a seeded synthetic sedan/pickup dataset as PNG folders.
    Synth(commands::synth::SynthArgs),
    /// Train a model and evaluate it under clean and fogged test images.
    Train(commands::train::TrainArgs),
    /// Evaluate a checkpoint on a dataset under clean and fogged conditions.
    Eval(commands::eval::EvalArgs),
    /// Apply synthetic fog to every PNG under a directory.
    Augment(commands::augment::AugmentArgs),
    /// Run the registered finite-difference gradient checks.
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Merge confusion tallies into report.csv and report.md.
    Report(commands::report::ReportArgs),
}

fn run(cli: Cli) -> Result<()> {
    run::configure_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Augment(a) => commands::augment::run(a),
        Command::Gradcheck(a) => commands::gradcheck::run(a),
        Command::Report(a) => commands::report::run(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{}", e.render());
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            eprint!("{}", text.replacen("error:", "error[usage]:", 1));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            let msg = e.to_string().replace('\n', " ");
            let msg = msg.strip_prefix(&format!("{category}: ")).unwrap_or(&msg);
            eprintln!("error[{category}]: {msg}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
