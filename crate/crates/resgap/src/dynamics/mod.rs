//! Classical side: scattering potentials and the Hamiltonian flow of
//! `p(x, xi) = |xi|^2 + V(x)`, including the variational (tangent) flow.

pub mod flow;
pub mod potential;

pub use flow::{flow, flow_path, flow_with_segments, FlowSpec, PhasePoint, SmallMat, Tangent};
pub use potential::{Bump, PotentialKind, PotentialSpec};
