//! Sparse matrix storage, LU factorization, and the block elimination that
//! solves the 2n-by-2n semi-implicit stage system with a single n-by-n LU.

mod lu;
mod sparse;
mod stage;

pub use lu::{lu_factorize, LuFactors};
pub use sparse::{Scalar, SparseMatrix};
pub use stage::{build_stage_system, StageSystem};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    /// Zero pivot survived partial pivoting. For the solvers this is a
    /// recoverable event (reject the step), not a fatal error.
    #[error("singular matrix: no usable pivot in column {col}")]
    Singular { col: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
