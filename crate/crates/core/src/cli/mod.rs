//! Command-line front end. Every command reads a TOML [`RunConfig`] and
//! writes its artifacts under the configured output directory.

mod commands;
mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::{AdapterSection, GradcheckSection, PretrainSection, Resolved, RunConfig};

use crate::backbone::ModelError;
use crate::format::FormatError;
use crate::peft::{AdapterError, Method};
use crate::serving::ServingError;
use crate::tensor::TensorError;
use crate::training::TrainError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Serving(#[from] ServingError),
    #[error("{0}")]
    Numerical(String),
}

fn tensor_numeric(e: &TensorError) -> bool {
    matches!(e, TensorError::NonFinite { .. } | TensorError::NonFiniteInput { .. })
}

fn model_numeric(e: &ModelError) -> bool {
    match e {
        ModelError::Tensor(t) | ModelError::Adapter(AdapterError::Tensor(t)) => tensor_numeric(t),
        _ => false,
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        let numeric = match self {
            CliError::Usage(_) => return EXIT_USAGE,
            CliError::Numerical(_) => true,
            CliError::Model(e) => model_numeric(e),
            CliError::Adapter(AdapterError::Tensor(t)) => tensor_numeric(t),
            CliError::Train(TrainError::Divergence { .. }) => true,
            CliError::Train(TrainError::Tensor(t)) => tensor_numeric(t),
            CliError::Train(TrainError::Model(e)) => model_numeric(e),
            CliError::Serving(ServingError::Nondeterministic { .. }) => true,
            CliError::Serving(ServingError::Model(e)) => model_numeric(e),
            _ => false,
        };
        if numeric {
            EXIT_NUMERICAL
        } else {
            EXIT_VALIDATION
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "paraserve", version, about = "Decoder-only transformer with PARA, LoRA and (IA)3 adapters")]
pub struct Cli {
    /// Run config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Replace the wall clock with a fixed-step stub so timing fields are
    /// reproducible.
    #[arg(long, global = true)]
    pub stub_clock: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a randomly initialized backbone, optionally copy-pretrained.
    Init {
        #[arg(long)]
        pretrain: bool,
    },
    /// Train the configured adapter on the configured task.
    Train,
    /// Generate from a prompt of token ids and print the new ids.
    Generate {
        /// Token ids separated by commas or spaces.
        #[arg(long, conflicts_with = "prompt_file")]
        prompt: Option<String>,
        #[arg(long)]
        prompt_file: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        beam: usize,
        #[arg(long, default_value_t = 32)]
        max_new: usize,
        /// Adapter file; the bare backbone is used when omitted.
        #[arg(long)]
        adapter: Option<PathBuf>,
    },
    /// Run the serving benchmark and write bench.json / bench.csv.
    Bench,
    /// Print tunable-parameter counts per method.
    CountParams,
    /// Finite-difference check of the gradients (64-bit).
    Gradcheck {
        /// Method to check; `none` checks the backbone weights.
        #[arg(long)]
        method: Option<Method>,
    },
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match commands::dispatch(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
