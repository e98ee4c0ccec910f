//! The `symdiff` command line: corpus generation, training either
//! generator, sampling, evaluation and report comparison.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use args::Cli;
pub use config::RunConfig;
pub use error::{CliError, ErrorKind};

/// Resolves the configuration and runs one subcommand.
pub fn run(cli: Cli) -> error::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("--threads: {e}")))?;
    }
    let base = RunConfig::load(cli.config.as_deref())?;
    commands::dispatch(cli.command, base, cli.config.as_deref())
}
