//! Heat kernels of the fractional Laplacian perturbed by a gradient drift.
//!
//! The free α-stable kernel is built by subordination, the drifted and
//! killed kernels by a Duhamel/Picard series on a lattice, and every
//! estimate is cross-checked against a Monte Carlo simulation of the
//! killed process.

pub mod duhamel;
pub mod envelope;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod kato;
pub mod montecarlo;
pub mod quad;
pub mod report;
pub mod rng;
pub mod stable_core;
pub mod verify;

pub use error::{Error, Result};
