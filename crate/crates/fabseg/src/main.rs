//! Command-line entry point for the farmland parcel delineation pipeline.
//!
//! Parse errors (unknown subcommands, malformed flags) are reported by the
//! argument parser itself with a non-zero status; pipeline errors print one
//! diagnostic line to stderr and exit with status 1. All data outputs go to
//! the paths named by the subcommand flags, never to the console.

use clap::Parser;
use fabseg::cli::{run, Cli};
use std::process::ExitCode;

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
