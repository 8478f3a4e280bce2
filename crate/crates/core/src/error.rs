use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid metadata: {0}")]
    InvalidMetadata(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("tape error: {0}")]
    Tape(String),

    #[error("invalid filter design: {0}")]
    FilterDesign(String),

    #[error("missing noise category {category} for lead {lead}")]
    MissingNoise { category: String, lead: u8 },

    #[error("record has {found} leads, {needed} required")]
    LeadCount { found: usize, needed: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("label/task mismatch: {0}")]
    LabelMismatch(String),

    #[error("{path}: bad magic, not a {expected} file")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checksum mismatch: file is corrupted")]
    ChecksumMismatch,

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Process exit codes used by the command-line tool.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
    pub const DATA: i32 = 4;
    pub const DIVERGED: i32 = 5;
    pub const GRADCHECK: i32 = 6;
}

impl Error {
    /// Category code, see [`exit`].
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::FilterDesign(_) => exit::CONFIG,
            Error::Io(_) => exit::IO,
            Error::InvalidMetadata(_)
            | Error::MissingNoise { .. }
            | Error::LeadCount { .. }
            | Error::LabelMismatch(_)
            | Error::BadMagic { .. }
            | Error::VersionMismatch { .. }
            | Error::ChecksumMismatch
            | Error::Truncated(_)
            | Error::Malformed(_)
            | Error::Csv(_) => exit::DATA,
            Error::Diverged(_) | Error::NonFinite(_) => exit::DIVERGED,
            Error::ShapeMismatch { .. } | Error::DegenerateEmbedding(_) | Error::Tape(_) | Error::UndefinedMetric(_) => {
                exit::OTHER
            }
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }

    /// An IO error that names the file involved.
    pub fn io_at(path: &std::path::Path, e: std::io::Error) -> Self {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
