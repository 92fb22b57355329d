//! Numerical laboratory for p-Laplacian type systems with potential terms.

pub mod catalog;
pub mod cli;
pub mod error;
pub mod estimates;
pub mod fields;
pub mod linalg;
pub mod lorentz;
pub mod models;
pub mod potentials;
pub mod quadrature;
pub mod solver;

pub use error::{Error, Result};
