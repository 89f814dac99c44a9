//! Command-line driver: `generate`, `train`, `eval` and `report`.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use args::Cli;
pub use error::{CliError, Result};

pub fn run(cli: &Cli) -> Result<()> {
    use args::Command;
    match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train_command(a),
        Command::Eval(a) => commands::eval(a),
        Command::Report(a) => commands::report(a),
    }
}
