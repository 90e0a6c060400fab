//! Minimal reverse-mode automatic differentiation and the Adam optimiser.

mod adam;
mod array;
pub mod check;
mod params;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use array::DenseArray;
pub use params::{ParamId, ParamStore};
pub use tape::{Tape, Var, LEAKY_SLOPE};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("expected a scalar, found shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: &'static str },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
