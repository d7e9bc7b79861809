//! Density-based topology optimization of 2D plane-stress continua for
//! minimum compliance under linearized buckling constraints.

pub mod aggregation;
pub mod analysis;
pub mod driver;
pub mod elements;
pub mod error;
pub mod field;
pub mod linalg;
pub mod mesh;
pub mod optimizer;
pub mod postprocess;
pub mod sensitivity;

pub use error::{Error, Result};
