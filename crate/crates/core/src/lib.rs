//! Matrix-free orthogonal multi-view subspace learning.
//!
//! The library learns one orthonormal projection matrix per data view by
//! extracting columns from successively deflated generalized eigenvalue
//! problems. The stack, bottom up:
//!
//! - [`linop`]: dense kernels and the abstract symmetric-operator layer:
//!   centering, Gram-form data operators, deflation projectors, block
//!   assembly, and Lanczos basis generation;
//! - [`eigsolve`]: a locally optimal conjugate-gradient style solver for the
//!   top eigenpair of a semi-definite pencil, plus a deflated top-k routine;
//! - [`osave`]: the successive-approximation driver that turns repeated
//!   top-eigenvector solves into per-view orthonormal projections;
//! - [`models`]: dataset statistics as matrix-free operators and the model
//!   registry that assembles a pencil from a model specification;
//! - [`eval`]: projection/fusion, nearest-neighbor and multi-label
//!   classification backends, metrics, and synthetic data;
//! - [`io`] and [`cli`]: text-based interchange formats and the batch
//!   command-line front end.

pub mod bench;
pub mod cli;
pub mod eigsolve;
pub mod error;
pub mod eval;
pub mod io;
pub mod linop;
pub mod models;
pub mod osave;
pub mod pipeline;

pub use error::{Error, Result};
