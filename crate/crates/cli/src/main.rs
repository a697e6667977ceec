//! `cellbloom`: ingest, train, transform, evaluate and crowd-annotate.
//!
//! Every subcommand accepts `--config <file.json>`, a JSON object keyed by
//! long flag names; flags given on the command line win. The effective
//! arguments are written as `run_config.json` next to each output.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use commands::{Cli, CliError};

fn main() -> ExitCode {
    let raw: Vec<String> = std::env::args().collect();
    let names: Vec<String> = Cli::command().get_subcommands().map(|c| c.get_name().to_string()).collect();
    let argv = match config::expand_config(raw, &names) {
        Ok(a) => a,
        Err(e) => return fail(&CliError::Usage(e)),
    };
    let matches = match Cli::command().args_override_self(true).try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind::*;
            if matches!(e.kind(), DisplayHelp | DisplayVersion | DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            return fail(&CliError::Usage(first.to_string()));
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => return fail(&CliError::Usage(e.to_string())),
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| cli.log_level.clone().into()),
        )
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &CliError) -> ExitCode {
    let (kind, code) = match e {
        CliError::Usage(_) => ("usage", 2),
        CliError::Runtime(_) => ("runtime", 1),
    };
    let line = serde_json::json!({ "error": kind, "message": e.message() });
    eprintln!("{line}");
    ExitCode::from(code)
}
