//! Matrix-free preconditioned conjugate gradient toolkit for Gaussian process
//! kernel machines.

pub mod classification;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod precond;
pub mod regression;
pub mod solvers;
pub mod trace;
pub mod training;

pub use error::{Error, Result};
