//! Batch commands, file layout and the review server behind the `plumbline`
//! binary.

pub mod commands;
pub mod config;
pub mod server;

pub use config::PipelineConfig;

/// Suffix of segment files; the stem is the image id.
pub const SEGMENT_SUFFIX: &str = ".segments.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("insufficient segments: {0}")]
    InsufficientSegments(String),
    #[error("image id mismatch: {0}")]
    IdMismatch(String),
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Core(#[from] plumbline::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::InsufficientSegments(_) => 3,
            CliError::IdMismatch(_) => 4,
            _ => 1,
        }
    }
}
