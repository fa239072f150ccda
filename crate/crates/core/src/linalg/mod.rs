//! Banded and dense direct solvers with exact operation counts.

mod band;
mod dense;

pub use band::{
    band_lu, band_matvec, band_times_dense, default_pivot_tol, solve_lower_band, solve_upper_band, thomas_factorize,
    BandLu, BandMatrix,
};
pub use dense::{dense_lu_pivoted, dense_solve, DenseLu, DenseMatrix};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("pivot {value:e} in row {row} is below tolerance {tol:e}")]
    SmallPivot { row: usize, value: f64, tol: f64 },
    #[error("matrix is singular: no usable pivot in column {row}")]
    Singular { row: usize },
    #[error("zero diagonal entry in row {row} of triangular factor")]
    ZeroDiagonal { row: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid bandwidths ml={ml}, mu={mu} for dimension {n}")]
    InvalidBandwidth { n: usize, ml: usize, mu: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}
