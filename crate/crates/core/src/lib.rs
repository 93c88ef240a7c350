//! Probability-free portfolio calculus on sampled paths.
//!
//! The engine works along a fixed hierarchy of nested refining partitions:
//! covariations and pathwise integrals are finite Riemann sums per level, and
//! the limit statements of the underlying calculus become
//! deviation-shrinks-under-refinement assertions. On top of that sit
//! functionally generated portfolios (state-dependent and path-dependent)
//! and ledgers that verify both master formulas by computing their two sides
//! independently.

pub mod calculus;
pub mod error;
pub mod families;
pub mod functional;
pub mod genport;
pub mod grid;
pub mod portfolio;
pub mod synthetic;

pub use error::{Error, Result};
