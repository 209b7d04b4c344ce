//! Finite-volume Euclidean Gibbs measures of quantum anharmonic lattice
//! models in the temperature-loop representation, their quasiclassical and
//! classical counterparts, and the numerical machinery used to compare them
//! as the reduced mass grows.

pub mod cli;
pub mod energy;
pub mod error;
pub mod gaussian;
pub mod gibbs;
pub mod lattice;
pub mod loops;
pub mod observables;
pub mod oracle;

pub use error::{Error, Result};
