//! Matrix-free Newton steps for residuals composed of layers with banded
//! local Jacobians.
//!
//! The crate has three parts. [`dag`] and [`transform`] model linearized
//! programs as labelled DAGs and turn them into uniformly layered ones,
//! [`linalg`] provides flop-instrumented band and dense kernels, and
//! [`newton`] combines them into the two Newton-step strategies. Sample
//! problems live in [`problems`].

pub mod dag;
pub mod flops;
pub mod format;
pub mod linalg;
pub mod newton;
pub mod problems;
pub mod transform;

pub use dag::{Dag, DagError, Edge, LayerReport, VertexId};
pub use flops::FlopCount;
pub use linalg::{BandMatrix, DenseMatrix, LinalgError};
pub use newton::{ChainResidual, LayerFunction, NewtonConfig, NewtonError, NewtonResult, Strategy};
