//! `fifm` command-line entry point.
//!
//! Exit codes: 0 success, 1 a requested check failed, 2 usage or input
//! error, 3 capability error, 4 sampling or numerical failure.

mod args;
mod commands;
mod output;

use clap::Parser;
use fifm::FifmError;

fn exit_code(e: &anyhow::Error) -> i32 {
    match e.downcast_ref::<FifmError>() {
        Some(FifmError::Capability(_)) => 3,
        Some(FifmError::Sampling(_) | FifmError::Numerical(_)) => 4,
        Some(FifmError::Domain(_) | FifmError::Argument(_) | FifmError::Schema(_)) => 2,
        None => 2,
    }
}

fn main() {
    let cli = args::Cli::parse();
    let code = match commands::run(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("fifm: {e:#}");
            exit_code(&e)
        }
    };
    std::process::exit(code);
}
