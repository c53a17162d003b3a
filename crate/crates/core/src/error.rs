use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no alignment of {target_len} labels fits in {frames} frames")]
    Infeasible { frames: usize, target_len: usize },

    #[error("instance too large for enumeration: {0}")]
    TooLarge(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },

    #[error("character error rate undefined: total reference length is zero")]
    UndefinedCer,

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Index(_) => "index",
            Error::Config(_) => "config",
            Error::Infeasible { .. } => "infeasible",
            Error::TooLarge(_) => "too_large",
            Error::Format(_) => "format",
            Error::Corrupt(_) => "corrupt",
            Error::NonFinite { .. } => "non_finite",
            Error::UndefinedCer => "undefined_cer",
            Error::Empty(_) => "empty",
            Error::Io(_) => "io",
        }
    }
}
