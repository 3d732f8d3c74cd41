//! Hamiltonian flow of `p(x, xi) = |xi|^2 + V(x)`:
//!
//! ```text
//! x'  =  2 xi
//! xi' = -grad V(x)
//! ```
//!
//! integrated with an adaptive embedded Dormand-Prince 5(4) scheme, together
//! with the variational flow for tangent maps.

use crate::dynamics::potential::PotentialSpec;
use crate::error::{Error, Result};

/// A point of phase space; only the first `n` entries of each array are used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub x: [f64; 2],
    pub xi: [f64; 2],
}

impl PhasePoint {
    pub fn new1(x: f64, xi: f64) -> Self {
        PhasePoint { x: [x, 0.0], xi: [xi, 0.0] }
    }

    pub fn new2(x: [f64; 2], xi: [f64; 2]) -> Self {
        PhasePoint { x, xi }
    }

    /// Energy `p = |xi|^2 + V(x)`.
    pub fn energy(&self, pot: &PotentialSpec) -> f64 {
        let n = pot.dimension;
        let kin: f64 = self.xi[..n].iter().map(|v| v * v).sum();
        kin + pot.eval(&self.x[..n])
    }

    /// The Hamilton vector field at this point, packed as a tangent vector.
    pub fn hamilton_field(&self, pot: &PotentialSpec) -> Tangent {
        let n = pot.dimension;
        let mut g = [0.0; 2];
        pot.grad(&self.x[..n], &mut g);
        let mut v = [0.0; 4];
        for k in 0..n {
            v[k] = 2.0 * self.xi[k];
            v[n + k] = -g[k];
        }
        v
    }
}

/// Tangent vector `(dx_0..dx_{n-1}, dxi_0..dxi_{n-1})`, contiguous in `2n`.
pub type Tangent = [f64; 4];

/// Row-major tangent map on the `2n x 2n` leading block.
pub type SmallMat = [[f64; 4]; 4];

/// Apply a tangent map to a tangent vector.
pub fn mat_vec(m: &SmallMat, v: &Tangent, dims: usize) -> Tangent {
    let mut out = [0.0; 4];
    for (r, row) in m.iter().enumerate().take(dims) {
        out[r] = row[..dims].iter().zip(&v[..dims]).map(|(a, b)| a * b).sum();
    }
    out
}

/// Compose tangent maps: `a * b` (apply `b` first).
pub fn mat_mul(a: &SmallMat, b: &SmallMat, dims: usize) -> SmallMat {
    let mut out = [[0.0; 4]; 4];
    for r in 0..dims {
        for c in 0..dims {
            out[r][c] = (0..dims).map(|k| a[r][k] * b[k][c]).sum();
        }
    }
    out
}

pub fn identity_mat(dims: usize) -> SmallMat {
    let mut m = [[0.0; 4]; 4];
    for (k, row) in m.iter_mut().enumerate().take(dims) {
        row[k] = 1.0;
    }
    m
}

/// Euclidean inner product on tangent vectors.
pub fn dot(a: &Tangent, b: &Tangent, dims: usize) -> f64 {
    a[..dims].iter().zip(&b[..dims]).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &Tangent, dims: usize) -> f64 {
    dot(a, a, dims).sqrt()
}

/// Integration controls for the flow.
#[derive(Debug, Clone, Copy)]
pub struct FlowSpec {
    /// Absolute and relative tolerance of the embedded scheme.
    pub tol: f64,
    /// Hard bound on a single step.
    pub max_step: f64,
}

impl Default for FlowSpec {
    fn default() -> Self {
        FlowSpec { tol: 1e-10, max_step: 0.25 }
    }
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// difference between the 5th and embedded 4th order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const MAX_COMPONENTS: usize = 20; // 2n phase + (2n)^2 jacobian at n = 2

/// Adaptive stepper carrying the phase point and optionally the accumulated
/// tangent map from the starting point.
pub struct Stepper<'a> {
    pot: &'a PotentialSpec,
    spec: FlowSpec,
    with_jacobian: bool,
    n: usize,
    dims: usize,
    len: usize,
    t: f64,
    y: [f64; MAX_COMPONENTS],
    dt: f64,
}

impl<'a> Stepper<'a> {
    pub fn new(pot: &'a PotentialSpec, start: PhasePoint, spec: FlowSpec, with_jacobian: bool) -> Self {
        let n = pot.dimension;
        let dims = 2 * n;
        let len = if with_jacobian { dims + dims * dims } else { dims };
        let mut y = [0.0; MAX_COMPONENTS];
        for k in 0..n {
            y[k] = start.x[k];
            y[n + k] = start.xi[k];
        }
        if with_jacobian {
            for k in 0..dims {
                y[dims + k * dims + k] = 1.0;
            }
        }
        Stepper { pot, spec, with_jacobian, n, dims, len, t: 0.0, y, dt: 1e-3 }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn point(&self) -> PhasePoint {
        let mut p = PhasePoint { x: [0.0; 2], xi: [0.0; 2] };
        for k in 0..self.n {
            p.x[k] = self.y[k];
            p.xi[k] = self.y[self.n + k];
        }
        p
    }

    /// Accumulated tangent map since construction (identity when the
    /// variational flow is off).
    pub fn jacobian(&self) -> SmallMat {
        let mut m = identity_mat(self.dims);
        if self.with_jacobian {
            for c in 0..self.dims {
                for r in 0..self.dims {
                    m[r][c] = self.y[self.dims + c * self.dims + r];
                }
            }
        }
        m
    }

    /// Reset the accumulated tangent map to the identity.
    pub fn reset_jacobian(&mut self) {
        assert!(self.with_jacobian);
        for c in 0..self.dims {
            for r in 0..self.dims {
                self.y[self.dims + c * self.dims + r] = if r == c { 1.0 } else { 0.0 };
            }
        }
    }

    fn rhs(&self, y: &[f64; MAX_COMPONENTS], dy: &mut [f64; MAX_COMPONENTS]) {
        let n = self.n;
        let dims = self.dims;
        let mut g = [0.0; 2];
        self.pot.grad(&y[..n], &mut g);
        for k in 0..n {
            dy[k] = 2.0 * y[n + k];
            dy[n + k] = -g[k];
        }
        if self.with_jacobian {
            let mut hess = [[0.0; 2]; 2];
            self.pot.hess(&y[..n], &mut hess);
            // columns evolve by dv = (0, 2I; -Hess, 0) v
            for c in 0..dims {
                let col = dims + c * dims;
                for k in 0..n {
                    dy[col + k] = 2.0 * y[col + n + k];
                    let mut acc = 0.0;
                    for m in 0..n {
                        acc += hess[k][m] * y[col + m];
                    }
                    dy[col + n + k] = -acc;
                }
            }
        }
    }

    /// Take one accepted adaptive step toward `t_target` (which may be behind
    /// the current time; the sign of the step follows it).  Returns the new
    /// time.  No step crosses `t_target`.
    pub fn step_toward(&mut self, t_target: f64) -> Result<f64> {
        let remaining = t_target - self.t;
        if remaining == 0.0 {
            return Ok(self.t);
        }
        let dir = remaining.signum();
        let mut dt = self.dt.abs().min(remaining.abs()).min(self.spec.max_step) * dir;
        let mut k = [[0.0f64; MAX_COMPONENTS]; 7];
        loop {
            if dt.abs() < 1e-14 * self.t.abs().max(1.0) {
                return Err(Error::Numerical(format!(
                    "step size underflow at t = {} (stiff region)",
                    self.t
                )));
            }
            self.rhs(&self.y, &mut k[0]);
            for stage in 0..6 {
                let mut ytmp = self.y;
                for (j, kj) in k.iter().enumerate().take(stage + 1) {
                    let a = A[stage][j] * dt;
                    if a != 0.0 {
                        for i in 0..self.len {
                            ytmp[i] += a * kj[i];
                        }
                    }
                }
                let mut knext = [0.0; MAX_COMPONENTS];
                // the 6th row of A is the 5th-order solution; its stage
                // derivative is k7 (FSAL position)
                self.rhs(&ytmp, &mut knext);
                k[stage + 1] = knext;
                if stage == 5 {
                    // ytmp now holds the 5th order solution
                    let ynew = ytmp;
                    // embedded error estimate
                    let mut err: f64 = 0.0;
                    for i in 0..self.len {
                        let mut e = 0.0;
                        for (j, kj) in k.iter().enumerate() {
                            e += E[j] * kj[i];
                        }
                        e *= dt;
                        let scale = self.spec.tol + self.spec.tol * self.y[i].abs().max(ynew[i].abs());
                        err += (e / scale) * (e / scale);
                    }
                    err = (err / self.len as f64).sqrt();
                    if err <= 1.0 {
                        self.t += dt;
                        self.y = ynew;
                        if !self.y[..self.len].iter().all(|v| v.is_finite()) {
                            return Err(Error::Numerical(format!(
                                "trajectory left numeric range at t = {}",
                                self.t
                            )));
                        }
                        let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 5.0);
                        self.dt = (dt * fac).abs().min(self.spec.max_step);
                        return Ok(self.t);
                    }
                    let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
                    dt *= fac;
                }
            }
        }
    }

    /// Integrate until `t_target` (snapping once the remaining interval is at
    /// rounding level).
    pub fn advance_to(&mut self, t_target: f64) -> Result<()> {
        let dir = (t_target - self.t).signum();
        let snap = 1e-13 * t_target.abs().max(1.0);
        while (t_target - self.t) * dir > snap {
            self.step_toward(t_target)?;
        }
        self.t = t_target;
        Ok(())
    }
}

/// Flow a point for time `t` (either sign).
pub fn flow(pot: &PotentialSpec, start: PhasePoint, t: f64, spec: FlowSpec) -> Result<PhasePoint> {
    let mut st = Stepper::new(pot, start, spec, false);
    st.advance_to(t)?;
    Ok(st.point())
}

/// Flow a point through a monotone list of times, returning the point at each.
pub fn flow_path(
    pot: &PotentialSpec,
    start: PhasePoint,
    times: &[f64],
    spec: FlowSpec,
) -> Result<Vec<PhasePoint>> {
    let mut st = Stepper::new(pot, start, spec, false);
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        st.advance_to(t)?;
        out.push(st.point());
    }
    Ok(out)
}

/// Flow a point through monotone knot times, returning at each knot the phase
/// point and the tangent map of the segment from the previous knot (the first
/// segment starts at time zero).  Per-segment maps keep the entries well
/// scaled even over many Lyapunov times.
pub fn flow_with_segments(
    pot: &PotentialSpec,
    start: PhasePoint,
    knots: &[f64],
    spec: FlowSpec,
) -> Result<Vec<(PhasePoint, SmallMat)>> {
    let mut st = Stepper::new(pot, start, spec, true);
    let mut out = Vec::with_capacity(knots.len());
    for &t in knots {
        st.advance_to(t)?;
        out.push((st.point(), st.jacobian()));
        st.reset_jacobian();
    }
    Ok(out)
}
