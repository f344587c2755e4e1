//! Certified lower and upper bounds on moments `∫ x^k exp(-φ(x)) dx` of scalar
//! unnormalized densities, via refined piecewise-Gaussian envelopes, and their
//! use for bounding the variance of importance-sampling estimators.

pub mod baseline;
pub mod bounds;
pub mod cli;
pub mod density;
pub mod envelope;
pub mod error;
pub mod gaussmath;
pub mod jet;
pub mod isvar;
pub mod oracle;
pub mod table;

pub use error::{Error, Result};
