use std::io;

use thiserror::Error;

/// Errors produced by the tracking stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    Numeric(String),
    #[error("stale or mismatched forward cache: {0}")]
    Cache(String),
    #[error("unknown {kind} index {index}")]
    Lookup { kind: &'static str, index: usize },
    #[error("simulation diverged: {0}")]
    Divergence(String),
    #[error("frame {frame} out of range for clip with {frames} frames")]
    Range { frame: usize, frames: usize },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("expert capacity reached ({0} experts)")]
    Capacity(usize),
    #[error("expert {0} evaluated before its predecessors")]
    Sequencing(usize),
    #[error("motion generation failed: {0}")]
    Generation(String),
    #[error("unsupported format: {0}")]
    Format(String),
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
