//! Band Cholesky and symmetric eigen solvers.

pub mod band;
pub mod eigs;

pub use band::{BandCholesky, SymBand};
pub use eigs::{smallest_eigs, EigOptions, EigResult};
