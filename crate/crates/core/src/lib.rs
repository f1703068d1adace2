//! Snapshot subspaces of linear evolution equations with closed-form spectra.
//!
//! The crate samples eigen-expansion solutions on space/time grids, extracts
//! weighted-SVD subspaces from the resulting snapshot matrices and measures how
//! well those subspaces capture other solutions. A companion toolkit evaluates
//! the exponential moment quantities that govern when a few trajectories span
//! the whole solution space.

// Negated comparisons such as `!(x > 0.0)` are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
mod linalg;
pub mod moments;
pub mod snapshot;
pub mod spectral;
pub mod subspace;

pub use error::{Error, Result};
