mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;

use args::Cli;

/// Exit 2 for anything the user can fix by changing the invocation, 1 for
/// failures while running.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(uiot_core::Error),
}

impl From<uiot_core::Error> for CliError {
    fn from(e: uiot_core::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            e.exit()
        }
        Err(e) => {
            if std::env::args().any(|a| a == "--json") {
                eprintln!(
                    "{}",
                    json!({"code": "UsageError", "message": e.to_string().trim()})
                );
                return ExitCode::from(2);
            }
            e.exit()
        }
    };
    let json_errors = cli.global.json;
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (status, code, message) = match &err {
                CliError::Usage(m) => (2, "UsageError", m.clone()),
                CliError::Runtime(e) => (1, e.code(), e.to_string()),
            };
            if json_errors {
                eprintln!("{}", json!({"code": code, "message": message}));
            } else {
                eprintln!("error: {message}");
            }
            ExitCode::from(status)
        }
    }
}
