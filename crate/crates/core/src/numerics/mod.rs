//! Dense float64 linear algebra for small matrices and a matrix-valued
//! reverse-mode tape.

mod linalg;
mod matrix;
pub mod tape;

pub use linalg::{
    cholesky, cholesky_checked, cholesky_solve, cholesky_solve_vec, inverse_from_cholesky,
    inverse_spd, logdet_from_cholesky, logdet_spd, singular_values, solve_general, solve_spd,
    spectral_radius, symmetric_eigen, JITTER_SCALE,
};
pub use matrix::{dot, Matrix};
pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NumericsError {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("matrix is singular")]
    Singular,
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("backward pass requires a 1x1 output, got {0:?}")]
    NonScalarOutput((usize, usize)),
}
