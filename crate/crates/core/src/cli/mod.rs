//! The `cflow` command line: synth, train, eval, bench and check.

mod bench;
mod check;
mod config;
mod data;
mod eval;
mod synth;
mod train;

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};

pub use bench::BenchArgs;
pub use check::CheckArgs;
pub use config::{expand_config, Echo};
pub use eval::EvalArgs;
pub use synth::SynthArgs;
pub use train::{ModelKind, TrainArgs};

pub const CONFIG_ECHO: &str = "config.echo";

/// Exit code for runtime and numeric failures.
pub const EXIT_FAILURE: i32 = 1;
/// Exit code for configuration and usage errors.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "cflow",
    version,
    about = "Conditional normalizing-flow anomaly detection"
)]
#[command(args_override_self = true)]
pub struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info", value_parser = parse_level)]
    pub log_level: log::LevelFilter,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Clone, PartialEq)]
pub enum Command {
    /// Generate a synthetic feature-pyramid dataset.
    Synth(SynthArgs),
    /// Train flow decoders (or fit the MVG baseline).
    Train(TrainArgs),
    /// Score the test split and compute metrics.
    Eval(EvalArgs),
    /// Measure scoring throughput and model memory.
    Bench(BenchArgs),
    /// Run identity, Jacobian and gradient checks.
    Check(CheckArgs),
}

impl Command {
    pub fn echo(&self) -> String {
        match self {
            Command::Synth(a) => a.echo(),
            Command::Train(a) => a.echo(),
            Command::Eval(a) => a.echo(),
            Command::Bench(a) => a.echo(),
            Command::Check(a) => a.echo(),
        }
    }
}

/// Writes the resolved options as a `key=value` file that `--config` accepts.
pub(crate) fn write_echo(out: &Path, echo: &str) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(CONFIG_ECHO);
    fs::write(&path, echo).map_err(|e| Error::io(&path, e))
}

fn parse_level(s: &str) -> std::result::Result<log::LevelFilter, String> {
    s.parse().map_err(|_| format!("unknown log level {s:?}"))
}

struct StderrLogger(log::LevelFilter);

impl log::Log for StderrLogger {
    fn enabled(&self, m: &log::Metadata<'_>) -> bool {
        m.level() <= self.0
    }
    fn log(&self, r: &log::Record<'_>) {
        if self.enabled(r.metadata()) {
            eprintln!("[{}] {}", r.level().as_str().to_lowercase(), r.args());
        }
    }
    fn flush(&self) {}
}

fn init_logging(level: log::LevelFilter) {
    let logger = Box::leak(Box::new(StderrLogger(level)));
    if log::set_logger(logger).is_ok() {
        log::set_max_level(level);
    }
}

/// Parses arguments (after `--config` expansion) without running anything.
pub fn parse<I, T>(args: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let expanded = expand_config(args)
        .map_err(|e| clap::Error::raw(clap::error::ErrorKind::InvalidValue, format!("{e}\n")))?;
    Cli::try_parse_from(expanded)
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Bench(a) => bench::run(a),
        Command::Check(a) => check::run(a),
    }
}

/// Full entry point; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let cli = match parse(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.log_level);
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}
