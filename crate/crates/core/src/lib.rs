//! Adiabatic-limit effective operators on two model fibre bundles over a
//! circle, with a reference solver for the full operator.

pub mod error;
pub mod geometry;
pub mod fibre;
pub mod linalg;
pub mod adiabatic;
pub mod reference;
pub mod superadiabatic;
pub mod harness;

pub use error::{Error, Result};
