//! Error type shared across the core.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two tensor shapes do not conform for an operation.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A configuration constraint was violated.
    InvalidConfig(String),
    /// A non-finite value appeared where only finite values are allowed.
    NonFinite { context: String },
    /// A gradient contained NaN/Inf; names the offending parameter.
    NonFiniteGrad { param: String },
    /// Scheduler step outside `[0, total_steps]`.
    StepOutOfRange { step: usize, total: usize },
    /// History embedding was produced under a different model configuration.
    StaleEmbedding { expected: u64, found: u64 },
    /// The injection hook handed the encoder a malformed token block.
    HookContract(String),
    /// A mask contained values other than 0 and 1.
    NonBinaryMask,
    /// Malformed bytes while decoding a wire format.
    Decode(String),
    /// Input data violated a documented precondition.
    InvalidInput(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch between {lhs:?} and {rhs:?}")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::NonFiniteGrad { param } => {
                write!(f, "non-finite gradient for parameter `{param}`")
            }
            Error::StepOutOfRange { step, total } => {
                write!(f, "scheduler step {step} outside [0, {total}]")
            }
            Error::StaleEmbedding { expected, found } => write!(
                f,
                "stale history embedding: config hash {found:#018x}, model expects {expected:#018x}"
            ),
            Error::HookContract(msg) => write!(f, "injection hook contract violation: {msg}"),
            Error::NonBinaryMask => write!(f, "mask contains values other than 0 and 1"),
            Error::Decode(msg) => write!(f, "decode error: {msg}"),
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
