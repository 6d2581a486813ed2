//! Command-line front end: argument parsing, input loading, output files and
//! run manifests. Exit status is 0 on success, 1 for invalid arguments or
//! inputs and 2 for failures while running.

pub mod args;
mod commands;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::Parser;
use thiserror::Error;

pub use args::{Cli, Command};
pub use manifest::RunManifest;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid value for `{flag}`: {message}")]
    InvalidArgument { flag: &'static str, message: String },
    #[error("cannot read input for `{flag}` at {}: {source}", path.display())]
    MissingInput {
        flag: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Train(#[from] causaltab::train::TrainError),
    #[error(transparent)]
    Discovery(#[from] causaltab::causal::DiscoveryError),
    #[error(transparent)]
    Evaluation(#[from] causaltab::evaluation::EvalError),
    #[error(transparent)]
    Table(#[from] causaltab::tabular::TableError),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn invalid(flag: &'static str, message: impl ToString) -> Self {
        CliError::InvalidArgument {
            flag,
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::InvalidArgument { .. } | CliError::MissingInput { .. } => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

fn init_logging() {
    let env = env_logger::Env::default().filter_or("CAUSALTAB_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Messages go to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            eprint!("{}", e.render());
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            e.exit_code()
        }
    }
}
