use thiserror::Error;

use crate::dtype::DType;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("a {page}-byte page cannot hold whole rows of {dim} x {width}-byte elements")]
    NonDivisiblePage { page: usize, dim: usize, width: usize },

    #[error("matrix has a zero dimension ({rows}x{cols})")]
    EmptyMatrix { rows: usize, cols: usize },

    #[error("dense buffer holds {got} elements, {rows}x{cols} needs {expected}")]
    DenseSizeMismatch { rows: usize, cols: usize, expected: usize, got: usize },

    #[error("block ({i}, {k}) is outside the {rows}x{cols} block grid")]
    IndexOutOfRange { i: usize, k: usize, rows: usize, cols: usize },

    #[error("block holds {got} bytes, expected {expected}")]
    BlockSizeMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("operand layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("element type mismatch: expected {expected}, got {got}")]
    DTypeMismatch { expected: DType, got: DType },

    #[error("block geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("malformed blocked-matrix image: {0}")]
    Format(String),
}
