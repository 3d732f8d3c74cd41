//! Classical and quantum diagnostics for resonance gaps of semiclassical
//! Schrodinger operators `-h^2 Laplacian + V` with hyperbolic trapping.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod phase_space;
pub mod pressure;
pub mod quantum;
pub mod report;
pub mod svg;
pub mod trapping;

pub use error::{Error, Result};
