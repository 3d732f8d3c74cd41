//! Resonance eigensolves and the spectral gap certificate.
//!
//! One-dimensional grids go through a dense nonsymmetric eigensolve with
//! eigenvectors.  Two-dimensional grids use shift-invert Arnoldi sweeps over
//! a lattice of shifts spanning the search box, each backed by a banded LU
//! factorization (shifts run in parallel; note each holds its own
//! factorization, the dominant memory cost).

use num_complex::Complex64 as C64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lapack::eig_dense;
use super::operator::{Deformation, QuantumOp};
use crate::error::{Error, Result};

/// Default relative residual bound for accepting an eigenpair.
pub const TOL_RES: f64 = 1e-8;

/// Search rectangle `[E - half_width, E + half_width] x [-depth, 0]`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ResonanceBox {
    pub energy: f64,
    pub half_width: f64,
    pub depth: f64,
}

impl ResonanceBox {
    pub fn validate(&self) -> Result<()> {
        if !(self.half_width > 0.0 && self.depth > 0.0) {
            return Err(Error::Config("resonance box must have positive extent".into()));
        }
        Ok(())
    }

    pub fn contains(&self, z: C64) -> bool {
        (z.re - self.energy).abs() <= self.half_width && z.im <= 0.0 && z.im >= -self.depth
    }
}

/// One accepted eigenvalue with its relative residual.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Resonance {
    pub re: f64,
    pub im: f64,
    pub residual: f64,
}

impl Resonance {
    pub fn z(&self) -> C64 {
        C64::new(self.re, self.im)
    }
}

/// Resonances found in one box by one method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResonanceSet {
    pub entries: Vec<Resonance>,
    /// Deformation used ("scaling" or "cap").
    pub method: String,
    pub h: f64,
    /// Scaling angle or absorber strength.
    pub parameter: f64,
}

impl ResonanceSet {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("re_z,im_z,residual,method,h,theta_or_cap\n");
        for r in &self.entries {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.3e},{},{},{}\n",
                r.re, r.im, r.residual, self.method, self.h, self.parameter
            ));
        }
        out
    }

    /// Entry closest to the energy `e` (by real part).
    pub fn closest_to(&self, e: f64) -> Option<&Resonance> {
        self.entries.iter().min_by(|a, b| {
            (a.re - e)
                .abs()
                .partial_cmp(&(b.re - e).abs())
                .expect("finite resonance positions")
        })
    }
}

fn check_depth(op: &QuantumOp, bx: &ResonanceBox) -> Result<()> {
    bx.validate()?;
    match &op.deformation {
        Deformation::Scaling(s) => {
            let reach = s.theta * bx.energy / 2.0;
            if bx.depth > reach {
                return Err(Error::Config(format!(
                    "box depth {} exceeds the scaling reach {reach:.4} (theta E / 2); \
                     increase theta or shrink the box",
                    bx.depth
                )));
            }
        }
        Deformation::Cap(c) => {
            if bx.depth > c.strength / 2.0 {
                return Err(Error::Config(format!(
                    "box depth {} exceeds half the absorber strength {}; \
                     deeper resonances are distorted by the absorber",
                    bx.depth, c.strength
                )));
            }
        }
        Deformation::None => {
            return Err(Error::Config(
                "resonance search needs a deformed operator (scaling or cap)".into(),
            ));
        }
    }
    Ok(())
}

/// Compute all resonances of `op` inside `bx` with relative residual at most
/// `tol_res`, sorted by real part then imaginary part.
pub fn eigen_resonances(
    op: &QuantumOp,
    bx: &ResonanceBox,
    tol_res: f64,
    seed: u64,
) -> Result<ResonanceSet> {
    eigen_resonances_with_states(op, bx, tol_res, seed).map(|(set, _)| set)
}

/// Like [`eigen_resonances`] but also returns the eigenvector of each entry
/// (normalized, in grid ordering).
pub fn eigen_resonances_with_states(
    op: &QuantumOp,
    bx: &ResonanceBox,
    tol_res: f64,
    seed: u64,
) -> Result<(ResonanceSet, Vec<Vec<C64>>)> {
    check_depth(op, bx)?;
    let mut pairs = if op.grid.dimension == 1 {
        dense_pairs(op, bx, tol_res)?
    } else {
        arnoldi_pairs(op, bx, tol_res, seed)?
    };
    dedupe_pairs(&mut pairs);
    pairs.sort_by(|a, b| {
        (a.0.re, a.0.im)
            .partial_cmp(&(b.0.re, b.0.im))
            .expect("finite resonance positions")
    });
    let mut entries = Vec::with_capacity(pairs.len());
    let mut states = Vec::with_capacity(pairs.len());
    for (z, res, v) in pairs {
        entries.push(Resonance { re: z.re, im: z.im, residual: res });
        states.push(v);
    }
    let set = ResonanceSet {
        entries,
        method: op.deformation.method_name().to_string(),
        h: op.h,
        parameter: op.deformation.parameter(),
    };
    Ok((set, states))
}

type Pair = (C64, f64, Vec<C64>);

fn dense_pairs(op: &QuantumOp, bx: &ResonanceBox, tol_res: f64) -> Result<Vec<Pair>> {
    let n = op.n();
    let mut a = op.dense()?;
    let (vals, vecs) = eig_dense(&mut a, n, true)?;
    let vecs = vecs.expect("eigensolve requested vectors");
    let mut out = Vec::new();
    for (j, &z) in vals.iter().enumerate() {
        if !bx.contains(z) {
            continue;
        }
        let v = vecs[j * n..(j + 1) * n].to_vec();
        let res = op.residual(z, &v);
        if res <= tol_res {
            out.push((z, res, normalized(v)));
        }
    }
    Ok(out)
}

fn arnoldi_pairs(op: &QuantumOp, bx: &ResonanceBox, tol_res: f64, seed: u64) -> Result<Vec<Pair>> {
    let spacing_target = bx.depth.max(op.h * 0.5);
    let n_shifts = ((2.0 * bx.half_width / spacing_target).ceil() as usize).clamp(1, 32);
    let spacing = 2.0 * bx.half_width / n_shifts as f64;
    let shifts: Vec<C64> = (0..n_shifts)
        .map(|k| {
            C64::new(
                bx.energy - bx.half_width + (k as f64 + 0.5) * spacing,
                -bx.depth / 2.0,
            )
        })
        .collect();
    let m = 96.min(op.n().saturating_sub(2)).max(8);
    let results: Vec<Result<Vec<Pair>>> = shifts
        .par_iter()
        .map(|&sigma| {
            shift_invert_sweep(op, sigma, m, seed).map_err(|e| {
                Error::Numerical(format!("shift {sigma} failed: {e}"))
            })
        })
        .collect();
    let mut out = Vec::new();
    for r in results {
        for (z, res, v) in r? {
            if bx.contains(z) && res <= tol_res {
                out.push((z, res, v));
            }
        }
    }
    Ok(out)
}

/// One shift-invert Arnoldi sweep: `m` steps of `(A - sigma)^{-1}`, Ritz
/// values mapped back through `z = sigma + 1/mu`, residuals measured on the
/// original operator.
fn shift_invert_sweep(op: &QuantumOp, sigma: C64, m: usize, seed: u64) -> Result<Vec<Pair>> {
    let n = op.n();
    let lu = op.band_shifted(sigma)?.factor()?;
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ sigma.re.to_bits() ^ sigma.im.to_bits().rotate_left(17),
    );
    let mut v0: Vec<C64> = (0..n)
        .map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
        .collect();
    v0 = normalized(v0);

    let mut basis: Vec<Vec<C64>> = vec![v0];
    let mut hess = vec![C64::new(0.0, 0.0); m * (m + 1)]; // column j holds h[0..=j+1]
    let mut m_eff = m;
    for j in 0..m {
        let mut w = basis[j].clone();
        lu.solve(&mut w)?;
        // modified Gram-Schmidt with one reorthogonalization pass
        for pass in 0..2 {
            for (i, vi) in basis.iter().enumerate() {
                let c = dot_conj(vi, &w);
                axpy(&mut w, -c, vi);
                if pass == 0 {
                    hess[j * (m + 1) + i] = c;
                } else {
                    hess[j * (m + 1) + i] += c;
                }
            }
        }
        let beta = norm(&w);
        hess[j * (m + 1) + j + 1] = C64::new(beta, 0.0);
        if beta < 1e-12 {
            m_eff = j + 1;
            break;
        }
        for x in &mut w {
            *x /= beta;
        }
        basis.push(w);
    }

    // Ritz pairs of the m_eff x m_eff Hessenberg block
    let mut hm = vec![C64::new(0.0, 0.0); m_eff * m_eff];
    for j in 0..m_eff {
        for i in 0..m_eff.min(j + 2) {
            hm[j * m_eff + i] = hess[j * (m + 1) + i];
        }
    }
    let (mus, ys) = eig_dense(&mut hm, m_eff, true)?;
    let ys = ys.expect("eigensolve requested vectors");
    let mut out = Vec::new();
    for (k, &mu) in mus.iter().enumerate() {
        if mu.norm() < 1e-10 {
            continue; // unresolved: maps to |z - sigma| > 1e10
        }
        let z = sigma + mu.finv();
        let y = &ys[k * m_eff..(k + 1) * m_eff];
        let mut x = vec![C64::new(0.0, 0.0); n];
        for (i, vi) in basis.iter().take(m_eff).enumerate() {
            axpy(&mut x, y[i], vi);
        }
        let x = normalized(x);
        let res = op.residual(z, &x);
        out.push((z, res, x));
    }
    Ok(out)
}

/// Collapse entries within `1e-7 max(1, |z|)` of each other, keeping the one
/// with the smaller residual.
fn dedupe_pairs(pairs: &mut Vec<Pair>) {
    pairs.sort_by(|a, b| {
        (a.0.re, a.0.im)
            .partial_cmp(&(b.0.re, b.0.im))
            .expect("finite resonance positions")
    });
    let mut out: Vec<Pair> = Vec::with_capacity(pairs.len());
    for p in pairs.drain(..) {
        if let Some(last) = out.last_mut() {
            let tol = 1e-7 * last.0.norm().max(1.0);
            if (p.0 - last.0).norm() <= tol {
                if p.1 < last.1 {
                    *last = p;
                }
                continue;
            }
        }
        out.push(p);
    }
    *pairs = out;
}

fn normalized(mut v: Vec<C64>) -> Vec<C64> {
    let s = norm(&v);
    if s > 0.0 {
        for x in &mut v {
            *x /= s;
        }
    }
    v
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn dot_conj(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn axpy(y: &mut [C64], alpha: C64, x: &[C64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Outcome of the gap certificate on one resonance table.
#[derive(Debug, Clone, Serialize)]
pub struct GapCheck {
    pub gamma: f64,
    pub margin: f64,
    /// True when no resonance in the energy window comes closer to the real
    /// axis than `gamma h (1 - margin)`.
    pub verdict: bool,
    pub violators: Vec<Resonance>,
}

/// Certify the resonance-free strip `Im z > -gamma h` over the box's energy
/// window, with a relative safety `margin`.  The search depth must reach
/// `gamma h`, otherwise the table cannot support the claim.
pub fn check_gap(
    set: &ResonanceSet,
    bx: &ResonanceBox,
    gamma: f64,
    margin: f64,
) -> Result<GapCheck> {
    if !(gamma > 0.0) {
        return Err(Error::Config("gap rate gamma must be positive".into()));
    }
    if !(0.0..1.0).contains(&margin) {
        return Err(Error::Config("gap margin must lie in [0, 1)".into()));
    }
    let line = gamma * set.h;
    if bx.depth < line {
        return Err(Error::Config(format!(
            "search depth {} is shallower than the claimed gap {line:.4}; \
             deepen the box before certifying",
            bx.depth
        )));
    }
    let violators: Vec<Resonance> = set
        .entries
        .iter()
        .filter(|r| (r.re - bx.energy).abs() <= bx.half_width && r.im > -line * (1.0 - margin))
        .copied()
        .collect();
    Ok(GapCheck { gamma, margin, verdict: violators.is_empty(), violators })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::potential::PotentialSpec;
    use crate::quantum::grid::{Boundary, CapSpec, GridSpec, ScalingSpec};

    /// Transmission poles of the sech^2 barrier, from the hypergeometric
    /// connection formulas: z_n = V0 - h^2 (1/4 + (n+1/2)^2)
    ///                            - 2 i h (n+1/2) sqrt(V0 - h^2/4).
    fn barrier_poles(h: f64, count: usize) -> Vec<C64> {
        (0..count)
            .map(|n| {
                let half = n as f64 + 0.5;
                C64::new(
                    1.0 - h * h * (0.25 + half * half),
                    -2.0 * h * half * (1.0 - h * h / 4.0).sqrt(),
                )
            })
            .collect()
    }

    fn eckart_op(h: f64, points: usize, theta: f64) -> QuantumOp {
        let pot = PotentialSpec::standard_eckart();
        let grid = GridSpec {
            dimension: 1,
            half_width: 8.0,
            points,
            boundary: Boundary::PeriodicFourier,
        };
        QuantumOp::assemble(&pot, grid, h, Deformation::Scaling(ScalingSpec::global(theta)))
            .expect("assembly should succeed")
    }

    #[test]
    fn test_scaled_barrier_matches_transmission_poles() {
        let h = 0.125;
        let op = eckart_op(h, 512, 0.4);
        let bx = ResonanceBox { energy: 1.0, half_width: 0.1, depth: 0.19 };
        let set = eigen_resonances(&op, &bx, TOL_RES, 7).expect("eigensolve");
        let poles = barrier_poles(h, 2);
        assert!(!set.entries.is_empty(), "no resonances found near the barrier top");
        let z0 = set.closest_to(1.0).expect("nonempty").z();
        let err = (z0 - poles[0]).norm() / poles[0].norm();
        assert!(err < 1e-6, "leading pole off by {err:.2e}: {z0} vs {}", poles[0]);
    }

    #[test]
    fn test_resonances_independent_of_scaling_angle() {
        let h = 0.125;
        let bx = ResonanceBox { energy: 1.0, half_width: 0.1, depth: 0.19 };
        let a = eigen_resonances(&eckart_op(h, 512, 0.4), &bx, TOL_RES, 7).expect("theta=0.4");
        let b = eigen_resonances(&eckart_op(h, 512, 0.47), &bx, TOL_RES, 7).expect("theta=0.47");
        let za = a.closest_to(1.0).expect("entry at 0.4").z();
        let zb = b.closest_to(1.0).expect("entry at 0.47").z();
        assert!(
            (za - zb).norm() / za.norm() < 1e-6,
            "angle dependence: {za} vs {zb}"
        );
    }

    #[test]
    fn test_undeformed_operator_rejected() {
        let pot = PotentialSpec::standard_eckart();
        let grid = GridSpec {
            dimension: 1,
            half_width: 8.0,
            points: 512,
            boundary: Boundary::PeriodicFourier,
        };
        let op = QuantumOp::assemble(&pot, grid, 0.125, Deformation::None).expect("assembly");
        let bx = ResonanceBox { energy: 1.0, half_width: 0.1, depth: 0.1 };
        assert!(eigen_resonances(&op, &bx, TOL_RES, 7).is_err());
    }

    #[test]
    fn test_box_depth_limited_by_scaling_reach() {
        let op = eckart_op(0.125, 512, 0.4);
        // theta E / 2 = 0.2 at E = 1
        let bx = ResonanceBox { energy: 1.0, half_width: 0.1, depth: 0.3 };
        assert!(eigen_resonances(&op, &bx, TOL_RES, 7).is_err(), "overdeep box accepted");
    }

    #[test]
    fn test_gap_check_flags_shallow_entry() {
        let set = ResonanceSet {
            entries: vec![
                Resonance { re: 1.0, im: -0.002, residual: 1e-12 },
                Resonance { re: 1.01, im: -0.05, residual: 1e-12 },
            ],
            method: "cap".into(),
            h: 0.05,
            parameter: 1.0,
        };
        let bx = ResonanceBox { energy: 1.0, half_width: 0.05, depth: 0.1 };
        // gamma h = 0.01: the entry at -0.002 violates the strip
        let gc = check_gap(&set, &bx, 0.2, 0.0).expect("certificate applies");
        assert!(!gc.verdict, "shallow resonance not flagged");
        assert_eq!(gc.violators.len(), 1);
        assert!((gc.violators[0].im + 0.002).abs() < 1e-15);
    }

    #[test]
    fn test_gap_check_ignores_entries_outside_window() {
        let set = ResonanceSet {
            entries: vec![
                Resonance { re: 2.0, im: -1e-6, residual: 1e-12 },
                Resonance { re: 1.0, im: -0.05, residual: 1e-12 },
            ],
            method: "cap".into(),
            h: 0.05,
            parameter: 1.0,
        };
        let bx = ResonanceBox { energy: 1.0, half_width: 0.05, depth: 0.1 };
        let gc = check_gap(&set, &bx, 0.2, 0.0).expect("certificate applies");
        assert!(gc.verdict, "entry far outside the energy window affected the verdict");
        // and an empty table certifies trivially
        let empty = ResonanceSet { entries: vec![], ..set };
        assert!(check_gap(&empty, &bx, 0.2, 0.0).expect("certificate").verdict);
    }

    #[test]
    fn test_gap_check_requires_deep_enough_table() {
        let set = ResonanceSet {
            entries: vec![],
            method: "cap".into(),
            h: 0.05,
            parameter: 1.0,
        };
        let bx = ResonanceBox { energy: 1.0, half_width: 0.05, depth: 0.005 };
        assert!(
            check_gap(&set, &bx, 0.2, 0.0).is_err(),
            "shallow table certified a deeper gap"
        );
    }

    #[test]
    fn test_resonance_csv_round_trip_layout() {
        let set = ResonanceSet {
            entries: vec![Resonance { re: 0.5, im: -0.01, residual: 2e-10 }],
            method: "scaling".into(),
            h: 0.0625,
            parameter: 0.4,
        };
        let csv = set.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().expect("header"),
            "re_z,im_z,residual,method,h,theta_or_cap"
        );
        let row = lines.next().expect("one row");
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 6);
        assert_eq!(fields[3], "scaling");
        let re: f64 = fields[0].parse().expect("numeric re");
        assert!((re - 0.5).abs() < 1e-15);
    }

    #[test]
    fn test_shift_invert_agrees_with_dense_in_two_dimensions() {
        // single 2D bump with an absorber: compare the Arnoldi sweep against
        // a dense eigensolve of the same matrix
        let mut pot = PotentialSpec::standard_eckart();
        pot.kind = crate::dynamics::potential::PotentialKind::GaussianSum;
        pot.dimension = 2;
        pot.bumps[0].center = vec![0.0, 0.0];
        pot.bumps[0].width = 0.8;
        let grid = GridSpec {
            dimension: 2,
            half_width: 6.0,
            points: 28,
            boundary: Boundary::DirichletFd,
        };
        let h = 2.0;
        let op = QuantumOp::assemble(&pot, grid, h, Deformation::Cap(CapSpec::new(3.5, 0.6)))
            .expect("assembly");
        let bx = ResonanceBox { energy: 0.6, half_width: 0.5, depth: 0.45 };

        let fast = eigen_resonances(&op, &bx, TOL_RES, 11).expect("arnoldi sweep");

        let n = op.n();
        let mut a = op.dense().expect("dense");
        let (vals, _) = eig_dense(&mut a, n, false).expect("dense eigensolve");
        let mut slow: Vec<C64> = vals.into_iter().filter(|&z| bx.contains(z)).collect();
        slow.sort_by(|p, q| (p.re, p.im).partial_cmp(&(q.re, q.im)).expect("finite"));

        assert_eq!(
            fast.entries.len(),
            slow.len(),
            "arnoldi found {:?}, dense found {slow:?}",
            fast.entries
        );
        for (f, s) in fast.entries.iter().zip(&slow) {
            assert!(
                (f.z() - s).norm() < 1e-7 * s.norm().max(1.0),
                "mismatch: {} vs {s}",
                f.z()
            );
        }
    }
}
