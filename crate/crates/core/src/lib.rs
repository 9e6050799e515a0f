//! Pseudospectral simulation of coupled Klein-Gordon systems with
//! null-form quadratic nonlinearities, together with the diagnostics used
//! to check global stability numerically.

pub mod analytic;
pub mod decomposition;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod identities;
pub mod integrator;
pub mod model;
pub mod spectral;

pub use error::{Error, Result};
