use std::io;

use thiserror::Error;

/// Errors produced by the quantization, packing, GEMM and pipeline layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("non-binary entry {value} at ({row}, {col})")]
    NonBinary { row: usize, col: usize, value: u8 },

    #[error("inconsistent structure: {0}")]
    Structure(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("int32 overflow at ({row}, {col}): reduced value {value}")]
    Overflow { row: usize, col: usize, value: i64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("partition error: {0}")]
    Partition(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
