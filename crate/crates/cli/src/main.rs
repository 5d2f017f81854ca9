mod args;
mod commands;
mod error;

use std::collections::BTreeMap;
use std::process::ExitCode;

use clap::{error::ErrorKind, ArgMatches, CommandFactory, FromArgMatches};

use args::Cli;

/// Flag values as given, keyed by argument id, for the run manifest.
fn raw_args(m: &ArgMatches) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let Some((_, sub)) = m.subcommand() else {
        return out;
    };
    for id in sub.ids() {
        if let Ok(Some(vals)) = sub.try_get_raw(id.as_str()) {
            let joined: Vec<String> = vals.map(|v| v.to_string_lossy().into_owned()).collect();
            out.insert(id.to_string(), joined.join(","));
        }
    }
    out
}

fn main() -> ExitCode {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match commands::run(cli.command, raw_args(&matches)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
