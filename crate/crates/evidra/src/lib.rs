//! File formats and the command-line front end for `evidra-core`.
//!
//! - [`csv_io`]: dataset CSV files
//! - [`checkpoint`]: checkpoint JSON with exact base64 weight arrays
//! - [`report`]: the versioned report schema
//! - [`cli`]: argument definitions and `--config` expansion
//! - [`commands`]: the subcommands

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod csv_io;
pub mod error;
pub mod report;

use std::ffi::OsString;

use clap::Parser;

pub use error::{CliError, CliResult};

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run(argv: Vec<OsString>) -> CliResult<()> {
    let argv = cli::expand_config(argv)?;
    let parsed = match cli::Cli::try_parse_from(argv) {
        Ok(p) => p,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return Ok(());
            }
            let text = e.render().to_string();
            return Err(CliError::Usage(text.trim_start_matches("error: ").trim_end().to_string()));
        }
    };
    let level = match parsed.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();

    use cli::Command;
    match &parsed.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Calibrate(a) => commands::calibrate_cmd(a),
        Command::Eval(a) => commands::eval_cmd(a),
        Command::OodEval(a) => commands::ood_eval_cmd(a),
        Command::Compare(a) => commands::compare_cmd(a),
    }
}
