//! `spectrapad {synth|train|eval|ablate|analyze} --config <path> ...`
//!
//! `SPECTRAPAD_THREADS` caps the worker count. Exit codes: 0 success,
//! 2 configuration or usage error, 3 data or protocol error, 4 numeric failure.

use std::process::ExitCode;

use clap::Parser;
use spectrapad::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Ok(v) = std::env::var("SPECTRAPAD_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: cannot set up {n} worker threads: {e}");
                    return ExitCode::from(2);
                }
            }
            _ => {
                eprintln!("error: SPECTRAPAD_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
