//! Command-line driver: synthesis, training, rendering, meshing, evaluation
//! and the ablation grid.

pub mod ablate;
pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

pub use args::{Cli, Command};
pub use error::{CliError, ErrorKind};

/// Runs one parsed command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Render(a) => commands::render(a),
        Command::Mesh(a) => commands::mesh(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
    }
}
