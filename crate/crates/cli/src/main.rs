//! `hmnet` — train, decode, and evaluate hierarchical meeting
//! summarization models from the command line.

use std::process::ExitCode;

mod commands;
mod config;
mod error;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match commands::run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hmnet: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
