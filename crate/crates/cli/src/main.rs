//! `ccplan`: generate scenarios, solve them and run the experiment
//! pipelines. Exit codes: 0 on success, 1 on bad input, 2 when a single
//! solve ends without converging.

mod args;
mod commands;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match &cli.command {
        Command::Plan(a) => commands::plan(a),
        Command::Experiment(a) => commands::experiment(a),
        Command::Gen(a) => commands::gen(a),
    };
    match result {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
