//! Command-line driver for training, evaluating, benchmarking,
//! gradient-checking and routing.

pub mod args;
pub mod commands;
pub mod config;

use std::ffi::OsString;

use clap::Parser;
use thiserror::Error;

use args::{Cli, Command, Common};
use commands::{EXIT_DIVERGED, EXIT_FAILED, EXIT_INVALID, EXIT_OK};
use config::{read_config_file, RawConfig, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Core(#[from] sxnet_core::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use sxnet_core::Error as E;
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Failed(_) => EXIT_FAILED,
            CliError::Core(e) => match e {
                E::Diverged { .. } | E::NonFiniteGradient(_) => EXIT_DIVERGED,
                E::Config { .. } | E::NotPermutation(_) | E::Settings(_) | E::TooLong { .. } | E::Checkpoint(_) => {
                    EXIT_INVALID
                }
                E::NonFiniteLoss { .. } | E::Io(_) => EXIT_FAILED,
            },
        }
    }
}

fn resolve(common: &Common, specific: impl FnOnce(&mut RawConfig)) -> CliResult<RunConfig> {
    let mut raw = match &common.config {
        Some(path) => read_config_file(path)?,
        None => RawConfig::new(),
    };
    common.apply(&mut raw).map_err(CliError::Invalid)?;
    specific(&mut raw);
    Ok(RunConfig::resolve(&raw)?)
}

fn dispatch(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Train(a) => {
            let config = resolve(&a.common, |raw| a.apply(raw))?;
            if config.task.is_none() {
                eprintln!("usage: sxnet train --task <dup|copy|rev|sort|add|mul|select> [options]");
            } else {
                commands::log_config(&config);
            }
            commands::train(&config)
        }
        Command::Eval(a) => {
            let config = resolve(&a.common, |raw| a.apply(raw))?;
            commands::eval(&config)
        }
        Command::Bench(a) => {
            let config = resolve(&a.common, |raw| a.apply(raw))?;
            commands::bench(&config)
        }
        Command::Gradcheck(a) => {
            let mut raw_has_dtype = false;
            let mut config = resolve(&a.common, |raw| {
                raw_has_dtype = raw.contains_key("dtype");
                a.apply(raw)
            })?;
            // Gradient checks default to double precision.
            if !raw_has_dtype {
                config.dtype = sxnet_core::DType::F64;
            }
            commands::gradcheck(&config, a.list)
        }
        Command::Route(a) => {
            let config = resolve(&a.common, |_| {})?;
            commands::route(&config, a.perm.as_deref(), a.random.as_deref())
        }
    }
}

/// Runs the CLI on `args` (including the program name) and returns the
/// exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
