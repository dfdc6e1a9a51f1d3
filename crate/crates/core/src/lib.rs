//! Simulation of the damped nonlinear wave equation on the line driven by
//! additive white noise, with the coupling, energy and mixing diagnostics used
//! to study its convergence to equilibrium.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod coupling;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod functionals;
pub mod grid;
pub mod mixing;
pub mod noise;
pub mod output;
pub mod rng;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
