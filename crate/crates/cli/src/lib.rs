//! Library behind the `mtlrmt` binary: argument handling, file formats and subcommands.
//!
//! Set `MTLRMT_THREADS` to fix the size of the worker pool. Results do not depend on it.

pub mod args;
pub mod commands;
pub mod error;
pub mod io;
pub mod tsf;

use std::io::Write;

use args::{Cli, Command, Settings};
use error::{CliError, CliResult};

/// Snippets of the guide's command-line chapter, run as doctests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}

pub const THREADS_ENV: &str = "MTLRMT_THREADS";

fn dispatch(command: &Command, out: &mut dyn Write) -> CliResult<()> {
    let settings = Settings::resolve(command.flags())?;
    match command {
        Command::Fit(_) => commands::cmd_fit(&settings, out),
        Command::Predict(_) => commands::cmd_predict(&settings, out),
        Command::Risk(_) => commands::cmd_risk(&settings, out),
        Command::Tune(_) => commands::cmd_tune(&settings, out),
        Command::Sweep(_) => commands::cmd_sweep(&settings, out),
        Command::Simulate(_) => commands::cmd_simulate(&settings, out),
        Command::EstimateNoise(_) => commands::cmd_estimate_noise(&settings, out),
        Command::TsfPrepare(_) => commands::cmd_tsf_prepare(&settings, out),
    }
}

/// Runs one parsed command, inside a pool of `MTLRMT_THREADS` workers when that is set.
pub fn run(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    match std::env::var(THREADS_ENV) {
        Ok(value) => {
            let threads: usize =
                value.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
                    CliError::input(format!("{THREADS_ENV} must be a positive integer, got {value:?}"))
                })?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| CliError::input(format!("cannot start {threads} threads: {e}")))?;
            let mut buffer = Vec::new();
            let result = pool.install(|| dispatch(&cli.command, &mut buffer));
            match out.write_all(&buffer) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    return Err(CliError::input(format!("stdout: {e}")))
                }
                _ => {}
            }
            result
        }
        Err(_) => dispatch(&cli.command, out),
    }
}
