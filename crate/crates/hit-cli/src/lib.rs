//! Library surface of the command-line harness: configuration, dataset
//! plumbing, the persistent embedding store, training/evaluation drivers,
//! and run manifests. The `hit` binary is a thin argument parser over
//! these functions, and the acceptance suite drives them in-process.

pub mod config;
pub mod dataset;
pub mod harness;
pub mod manifest;
pub mod store;

/// Failures split by exit code: usage/validation problems exit 1, runtime
/// failures exit 2.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<hit_core::Error> for CliError {
    fn from(e: hit_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
