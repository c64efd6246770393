//! Lorentz-covariant Bohmian mechanics for spinless particles described by
//! multi-particle Klein-Gordon wave functions.
//!
//! The crate evaluates plane-wave superpositions analytically, integrates
//! trajectories as integral curves of the per-particle 4-currents, and
//! classifies a measurement hypersurface into the regions reachable and
//! unreachable from an initial hypersurface.

pub mod cli;
pub mod config;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod integrator;
pub mod output;
pub mod scenarios;
pub mod spacetime;
pub mod surface;
pub mod verify;
pub mod wavefunction;

pub use error::{Error, Result};
