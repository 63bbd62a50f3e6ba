//! Learns orthonormal linear (multi-)mode projections of vector and tensor
//! data jointly with a nonlinear neural prediction head, by minimizing a
//! prediction loss regularized by reconstruction error. The learned subspace
//! can then be explained through rotated axes, a global rank-1 linear
//! surrogate, and per-sample local regression coefficients.
//!
//! Module map:
//!
//! - [`tensor`] — dense/sparse tensor types and the mode-product algebra
//! - [`stiefel`] — SVD-based orthonormal reparameterization and its gradient
//! - [`model`] — projection + low-rank first layer + MLP head, and the loss
//! - [`train`] — mini-batch Adam training of all parameter groups
//! - [`interpret`] — axis rotation, linear surrogates, local coefficients
//! - [`data`] — datasets, generators, file formats, metrics, cross-validation

pub mod data;
pub mod error;
pub mod interpret;
pub mod model;
pub mod stiefel;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
