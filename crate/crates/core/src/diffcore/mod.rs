//! Reverse-mode differentiation over a closed set of dense and sparse
//! matrix primitives, plus the parameter store, Adam and a finite-difference
//! gradient checker.
//!
//! Every tensor is a row-major `f64` matrix. Rank-1 shapes `[n]` are viewed
//! as `1 x n` by the primitives; scalars are `[1]` or `[1, 1]`.

mod checkpoint;
mod gradcheck;
mod params;
mod sparse;
mod tape;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, grad_check_with, GradCheckReport};
pub use params::{adam_step, AdamConfig, Param, ParamStore};
pub use sparse::SparseMatrix;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Errors raised by the differentiable core.
#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: &'static str },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalarOutput(Vec<usize>),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{0}` registered twice")]
    DuplicateParameter(String),
    #[error("finite-difference epsilon must lie in (0, 1e-3], got {0}")]
    InvalidEpsilon(f64),
    #[error("duplicate sparse coordinate ({0}, {1})")]
    DuplicateCoordinate(usize, usize),
    #[error("sparse coordinate ({row}, {col}) outside shape {rows}x{cols}")]
    CoordinateOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DiffError> = std::result::Result<T, E>;
