//! Error type shared by every module of the crate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
pub enum SaiError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported Matrix Market field `{0}` (only real general/symmetric coordinate data)")]
    UnsupportedField(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid matrix structure: {0}")]
    InvalidStructure(String),

    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("matrix is structurally singular: maximum matching has size {matched} < {n}")]
    StructurallySingular { matched: usize, n: usize },

    #[error("degenerate least-squares pattern for column {column}")]
    DegeneratePattern { column: usize },

    #[error("irregular column {column} has a zero diagonal; apply the zero-free diagonal row permutation first")]
    ZeroDiagonal { column: usize },

    #[error("least-squares workspace for column {column} needs {bytes} bytes, above the guard of {limit} bytes")]
    WorkspaceGuard { column: usize, bytes: usize, limit: usize },

    #[error("singular capacitance matrix I + V^T W (condition estimate {cond:e})")]
    SingularUpdate { cond: f64 },

    #[error("matrix is not strictly row diagonally dominant (row {row}, margin {margin:e})")]
    NotDominant { row: usize, margin: f64 },
}

impl From<std::io::Error> for SaiError {
    fn from(e: std::io::Error) -> Self {
        SaiError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SaiError>;
