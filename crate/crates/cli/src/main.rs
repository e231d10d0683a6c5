//! `sai`: command-line front end for `sai-core`.
//!
//! Exit codes: 0 when the run succeeded (for `solve`, when `a < 1`),
//! 1 when `solve` finished without reaching the target, 2 for usage,
//! configuration or input errors, 3 for numerical failures.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use sai_core::SaiError;

use args::{normalize_argv, Cli};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(SaiError),
    /// Input file context around a core error.
    Input(String, SaiError),
}

impl From<SaiError> for CliError {
    fn from(e: SaiError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Input(..) => 2,
            CliError::Core(e) => match e {
                SaiError::Parse { .. }
                | SaiError::UnsupportedField(_)
                | SaiError::Io(_)
                | SaiError::DimensionMismatch { .. }
                | SaiError::Domain(_)
                | SaiError::InvalidStructure(_)
                | SaiError::IndexOutOfRange { .. } => 2,
                SaiError::StructurallySingular { .. }
                | SaiError::DegeneratePattern { .. }
                | SaiError::ZeroDiagonal { .. }
                | SaiError::WorkspaceGuard { .. }
                | SaiError::SingularUpdate { .. }
                | SaiError::NotDominant { .. } => 3,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Input(ctx, e) => write!(f, "{ctx}: {e}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse_from(normalize_argv(std::env::args())) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
