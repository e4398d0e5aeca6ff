//! `hybridimp` command-line front end.

mod ablate;
mod args;
mod commands;
mod config;
mod plot;
mod run;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};

/// Misuse detected after flag parsing; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config::inject(argv) {
        Ok(a) => a,
        Err(e) => return report(e),
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(&cli.global, a),
        Command::Mask(a) => commands::mask(&cli.global, a),
        Command::Train(a) => commands::train(&cli.global, a),
        Command::Impute(a) => commands::impute(&cli.global, a),
        Command::Eval(a) => commands::eval(&cli.global, a),
        Command::Ablate(a) => ablate::run(&cli.global, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

fn report(e: anyhow::Error) -> ExitCode {
    eprintln!("error: {e:#}");
    if e.downcast_ref::<UsageError>().is_some() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}
