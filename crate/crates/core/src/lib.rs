//! Quadratic-manifold Neural Galerkin reduced models.
//!
//! The crate is organised bottom-up:
//! - [`tensor_core`]: feature map and dense tensor contractions,
//! - [`full_models`]: finite-difference full models and RK4,
//! - [`manifold`]: training and evaluation of quadratic manifolds,
//! - [`reduced_vector`]: residual-minimizing reduced dynamics on the grid,
//!   the precomputed online-efficient path for linear models, and the
//!   constant test-space baseline,
//! - [`reduced_interp`]: the spline-interpolated variant with collocation,
//! - [`harness`]: configuration, metrics, persistence and experiment pipelines.

mod binio;
pub mod error;
pub mod full_models;
pub mod harness;
pub mod manifold;
pub mod reduced_interp;
pub mod reduced_vector;
pub mod snapshots;
pub mod tensor_core;

pub use error::{QmngError, Result};
