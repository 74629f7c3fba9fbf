//! Command line front end for the stillflow library. The binary is a thin
//! wrapper around [`run`]; keeping the logic here lets integration tests
//! drive the same code paths in-process.

pub mod anomaly;
pub mod args;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod pools;
pub mod synth;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;

/// Exit code when the command line itself is malformed.
pub const EXIT_USAGE: i32 = 1;
/// Exit code for bad inputs, I/O failures and validation errors.
pub const EXIT_DATA: i32 = 2;

/// Parses `argv` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match args::Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = err.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<commands::UsageError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_DATA
            }
        }
    }
}
