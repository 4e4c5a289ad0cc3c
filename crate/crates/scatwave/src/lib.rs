//! Numerical laboratory for wave decay on compactified scattering spacetimes.
//!
//! The crate builds Lorentzian scattering metrics in collar coordinates
//! `(rho, v, y)`, integrates the rescaled b-Hamiltonian flow, evolves the
//! conformally rescaled wave equation per spherical-harmonic mode out to null
//! infinity, computes resonances of the induced cap problem as a quadratic
//! eigenvalue problem, and fits the late-time tail of the radiation field.

pub mod cheb;
pub mod dd;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod linalg;
pub mod mellin;
pub mod resonance;
pub mod run;
pub mod wave;

pub use error::{Error, Result};
