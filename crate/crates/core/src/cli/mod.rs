//! Command-line interface of the `tsmixer` binary.

mod commands;
mod config;

pub use commands::{
    evaluate, forecast, synth, train, verify_theory, EvaluateArgs, ForecastArgs, SynthArgs, TheoryArgs,
};
pub use config::{DataSection, ExperimentConfig, ModelSection};

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "tsmixer", version, about = "All-MLP multivariate time-series forecasting")]
pub struct Cli {
    /// Experiment configuration (TOML); used by `train`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (`train`) or file (other commands).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes a checkpoint, history, and resolved config.
    Train,
    /// Score a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Forecast the horizon after the given history.
    Forecast(ForecastArgs),
    /// Generate a synthetic dataset with its schema sidecar.
    Synth(SynthArgs),
    /// Check the closed-form linear forecasters on random structured series.
    VerifyTheory(TheoryArgs),
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(dir) = detail_dir(&cli) {
                let _ = std::fs::write(dir.join("error.log"), format!("{e:#?}\n"));
            }
            e.exit_code()
        }
    }
}

/// Entry point of the binary.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    run(std::env::args_os())
}

fn detail_dir(cli: &Cli) -> Option<PathBuf> {
    let dir = match cli.command {
        Some(Command::Train) => cli.out.clone()?,
        _ => cli.out.as_ref()?.parent()?.to_path_buf(),
    };
    dir.is_dir().then_some(dir)
}

fn dispatch(cli: &Cli) -> Result<()> {
    if cli.print_config {
        let cfg = match &cli.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(Error::config("command", "no subcommand given; see --help"));
    };
    if cli.config.is_some() && !matches!(command, Command::Train) {
        return Err(Error::config(
            "--config",
            "only the train command reads a configuration file",
        ));
    }
    match command {
        Command::Train => {
            let path = cli
                .config
                .as_ref()
                .ok_or_else(|| Error::config("--config", "train needs a configuration file"))?;
            let summary = train(path, cli.seed, cli.out.as_deref())?;
            print!("{summary}");
            Ok(())
        }
        Command::Evaluate(args) => emit(&evaluate(args)?, cli.out.as_deref()),
        Command::Forecast(args) => emit(&forecast(args)?, cli.out.as_deref()),
        Command::Synth(args) => {
            let out = cli
                .out
                .as_deref()
                .ok_or_else(|| Error::config("--out", "synth needs an output CSV path"))?;
            synth(args, cli.seed.unwrap_or(0), out)
        }
        Command::VerifyTheory(args) => {
            let (report, passed) = verify_theory(args, cli.seed.unwrap_or(0))?;
            emit(&report, cli.out.as_deref())?;
            if passed {
                Ok(())
            } else {
                Err(Error::Numeric(
                    "theory check failed; see the violation lines in the report".into(),
                ))
            }
        }
    }
}

fn emit(text: &str, out: Option<&std::path::Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
