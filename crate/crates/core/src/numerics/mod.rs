//! Numerical kernels: dense matrices, Cholesky, thin SVD, least squares and
//! the distribution functions behind every p-value in the crate.

mod cholesky;
pub mod dist;
mod matrix;
mod ols;
mod svd;

pub use cholesky::Cholesky;
pub use dist::{dist_cdf, DistKind, Distribution};
pub use matrix::Matrix;
pub use ols::{ols, OlsFit};
pub use svd::{svd, Svd};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("empty matrix")]
    Empty,
    #[error("invalid degrees of freedom: {0}")]
    InvalidDf(f64),
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
}
