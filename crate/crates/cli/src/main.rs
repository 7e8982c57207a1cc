//! `npasa`: solve, inspect and check problems from the command line.
//!
//! Exit codes: 0 success, 1 input error, 2 iteration limit, 3 check failure.

mod args;
mod commands;

use std::io;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use commands::CliError;

fn run(cli: &Cli) -> Result<u8, CliError> {
    let mut out = io::stdout().lock();
    match &cli.command {
        Command::Solve(a) => commands::solve(a, &mut out),
        Command::Corpus(a) => commands::list_corpus(a, &mut out).map(|()| 0),
        Command::Check(a) => commands::check(a, &mut out).map(|()| 0),
        Command::Rate(a) => commands::rate(a, &mut out).map(|()| 0),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("npasa: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
