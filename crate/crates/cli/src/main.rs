//! `sardine`: batch front end of the despeckling toolkit.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numeric failure.

mod args;
mod commands;
mod config;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use crate::args::{Cli, Common};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<sardine_core::Error> for CliError {
    fn from(e: sardine_core::Error) -> Self {
        use sardine_core::Error as E;
        let code = match e {
            E::Numeric(_) | E::DegenerateVariance(_) | E::Diverged { .. } => EXIT_NUMERIC,
            E::Shape(_) | E::Domain(_) | E::Usage(_) | E::Format(_) | E::Io(_) => EXIT_USAGE,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::usage(e.to_string())
    }
}

fn configure_threads(common: &Common) -> Result<(), CliError> {
    let threads = match common.threads {
        Some(n) => n,
        None => match std::env::var("SARDINE_THREADS") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("SARDINE_THREADS must be a positive integer, got {v:?}")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if threads == 0 {
        return Err(CliError::usage("thread count must be >= 1"));
    }
    if rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().is_err() {
        log::debug!("thread pool already initialized");
    }
    sardine_core::exec::set_sequential(common.deterministic);
    Ok(())
}

fn run(args: Vec<OsString>) -> Result<(), CliError> {
    let args = config::expand(args)?;
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return if code == 0 { Ok(()) } else { Err(CliError { code: EXIT_USAGE, message: String::new() }) };
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::usage(e.to_string()))?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    configure_threads(cli.command.common())?;
    let definition = Cli::command();
    let effective = config::render(definition.find_subcommand(name).expect("parsed subcommand exists"), sub);
    commands::dispatch(&cli.command, &effective)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !e.message.is_empty() {
                eprintln!("error: {}", e.message);
            }
            ExitCode::from(e.code)
        }
    }
}
