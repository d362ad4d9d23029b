//! Numerical toolkit for Riesz gases: kernels and extensions, equilibrium measures,
//! next-order energies, Metropolis sampling, fluctuation statistics and transport maps.

pub mod conv;
pub mod energy;
pub mod equilibrium;
pub mod error;
pub mod grid;
pub mod kernel;
pub mod quad;
pub mod sampler;
pub mod solve;
pub mod statistics;
pub mod transport;

pub use error::{Error, Result};
