use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match occlu_cli::run(occlu_cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
