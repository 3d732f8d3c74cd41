//! Quantum side: operator assembly, resonance eigensolves, resolvent norms,
//! and absorbing-potential propagation.

pub mod grid;
pub mod lapack;
pub mod operator;
pub mod propagate;
pub mod resolvent;
pub mod resonances;
