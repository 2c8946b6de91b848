//! Command-line driver for `phasekit`: configuration layering, the
//! staged pipeline and deterministic CSV/JSON emission.

pub mod args;
pub mod error;
pub mod output;
pub mod run;

use std::path::PathBuf;

pub use args::Cli;
pub use error::CliError;

/// Resolves the configuration, runs the requested stages and writes the
/// results. Nothing is written unless every stage succeeded.
pub fn run_cli(cli: &Cli) -> Result<PathBuf, CliError> {
    let cfg = cli.config()?;
    let resolved = run::resolve(&cfg)?;
    let stage = cli.command.stage();
    let out = run::execute(stage, &resolved, cli.jobs)?;
    let env_root = std::env::var_os("PHASEKIT_OUT").map(PathBuf::from);
    let dir = cli.out_dir(stage, &resolved.config.model, &resolved.hash, env_root.as_deref());
    output::write_all(&dir, &out.tables, &out.meta, resolved.config.format)?;
    Ok(dir)
}
