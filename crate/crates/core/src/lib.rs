//! Generalized gradients of the optimal objective value of combinatorial
//! problems, computed from a single solver run, and the losses built on them.
//!
//! The crate is organized bottom-up:
//!
//! - [`grad`]: LP data types, the layer contract (which of `c`, `b`, `A`
//!   depend on the parameters) and gradient assembly / backward composition.
//! - [`assignment`]: Hungarian solver with dual potentials and the bag
//!   matching loss.
//! - [`alignment`]: global sequence alignment on the lattice DAG and its loss.
//! - [`lpref`]: dense simplex, enumeration oracles and finite-difference checks.
//! - [`tape`]: a small reverse-mode autodiff tape with combinatorial nodes.
//! - [`experiments`]: synthetic bag-learning and noisy-copy sequence tasks.
//! - [`cli`]: the `lincomb` command-line front end.

pub mod alignment;
pub mod assignment;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod grad;
pub mod lpref;
pub mod matrix;
pub mod tape;

pub use error::{Error, Result};
pub use matrix::Matrix;

/// Floor applied to probabilities before taking logs: `ln(1e-12)`.
pub const LOG_PROB_FLOOR: f64 = -27.631_021_115_928_547;

/// Default absolute/relative comparison tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;
