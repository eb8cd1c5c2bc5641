//! The `ibi` command-line driver. [`main_with`] is the whole program minus
//! process setup, so tests can run it in-process.

pub mod args;
mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;

use clap::{CommandFactory, Parser};

pub use args::Cli;
pub use commands::plan_run;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag combinations; help is printed.
    Usage(String),
    /// The command was understood but could not be carried out.
    Domain(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        CliError::Domain(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Domain(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

macro_rules! domain_from {
    ($($t:ty),* $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Domain(e.to_string())
            }
        })*
    };
}

domain_from!(
    ibi_core::corpus::CorpusError,
    ibi_core::taxonomy::TaxonomyError,
    ibi_core::promptkit::PromptError,
    ibi_core::gateway::GatewayError,
    ibi_core::pipeline::PipelineError,
    ibi_core::metrics::MetricsError,
    ibi_core::stats::StatsError,
    ibi_core::classic::ClassicError,
    ibi_core::report::ReportError,
    std::io::Error,
    serde_json::Error,
);

/// Help text of the subcommand named in `args`, or of the top-level command.
fn help_for(args: &[OsString]) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    let names: Vec<String> = cmd.get_subcommands().map(|c| c.get_name().to_string()).collect();
    let sub = args.iter().skip(1).filter_map(|a| a.to_str()).find(|a| names.iter().any(|n| n == a));
    match sub.and_then(|s| cmd.find_subcommand_mut(s)) {
        Some(sub) => sub.render_help().to_string(),
        None => cmd.render_help().to_string(),
    }
}

/// Runs the CLI and returns the process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
        Err(e) => {
            let _ = writeln!(err, "{}", e.render());
            let _ = write!(err, "{}", help_for(&args));
            return EXIT_USAGE;
        }
    };
    match commands::execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}\n");
            let _ = write!(err, "{}", help_for(&args));
            EXIT_USAGE
        }
        Err(CliError::Domain(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_DOMAIN
        }
    }
}
