//! Scattering potentials: sums of Gaussian bumps, the sech^2 barrier, and
//! polynomial-times-Gaussian bumps, in dimension 1 or 2.  All kinds extend
//! holomorphically off the real axis, which is what the complex-scaling
//! spectral method requires.

use crate::error::{Error, Result};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

/// Potential families supported by the JSON schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    /// `V(x) = sum_j A_j exp(-|x-c_j|^2 / w_j^2)`
    GaussianSum,
    /// `V(x) = A sech^2((x-c)/w)`, one dimensional.
    Eckart,
    /// `V(x) = sum_j A_j P_j(u) exp(-u)`, `u = |x-c_j|^2 / w_j^2`.
    CustomPolynomialTimesGaussian,
}

/// One bump of the potential.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bump {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub width: f64,
    /// Polynomial coefficients `[c_0, c_1, ...]` in `u = |x-c|^2/w^2`; only
    /// read for the polynomial-times-Gaussian kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poly: Option<Vec<f64>>,
}

/// A scattering potential, deserialized from the versioned JSON schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub format: u32,
    pub kind: PotentialKind,
    pub bumps: Vec<Bump>,
    pub dimension: usize,
}

/// Relative tolerance defining the effective radius: outside `R0` the
/// potential is below `tol * max|V|`.
pub const EFFECTIVE_RADIUS_TOL: f64 = 1e-10;

impl PotentialSpec {
    /// Parse and validate a JSON potential description.
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: PotentialSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != 1 {
            return Err(Error::Config(format!(
                "unsupported potential schema format {} (expected 1)",
                self.format
            )));
        }
        if self.dimension != 1 && self.dimension != 2 {
            return Err(Error::Config(format!(
                "dimension must be 1 or 2, got {}",
                self.dimension
            )));
        }
        if self.bumps.is_empty() {
            return Err(Error::Config("potential needs at least one bump".into()));
        }
        if self.kind == PotentialKind::Eckart && self.dimension != 1 {
            return Err(Error::Config("eckart potential is one dimensional".into()));
        }
        if self.kind == PotentialKind::Eckart && self.bumps.len() != 1 {
            return Err(Error::Config("eckart potential takes exactly one bump".into()));
        }
        for (j, b) in self.bumps.iter().enumerate() {
            if b.center.len() != self.dimension {
                return Err(Error::Config(format!(
                    "bump {} center has {} coordinates, dimension is {}",
                    j,
                    b.center.len(),
                    self.dimension
                )));
            }
            if !(b.width > 0.0) || !b.width.is_finite() {
                return Err(Error::Config(format!("bump {} width must be positive", j)));
            }
            if !b.amplitude.is_finite() || b.amplitude == 0.0 {
                return Err(Error::Config(format!("bump {} amplitude must be nonzero", j)));
            }
            if b.poly.is_some() && self.kind != PotentialKind::CustomPolynomialTimesGaussian {
                return Err(Error::Config(format!(
                    "bump {} has polynomial coefficients but kind is not custom_polynomial_times_gaussian",
                    j
                )));
            }
        }
        Ok(())
    }

    /// The standard sech^2 barrier: amplitude 1, center 0, width 1.
    pub fn standard_eckart() -> Self {
        PotentialSpec {
            format: 1,
            kind: PotentialKind::Eckart,
            bumps: vec![Bump { amplitude: 1.0, center: vec![0.0], width: 1.0, poly: None }],
            dimension: 1,
        }
    }

    /// Three Gaussian bumps of amplitude `a`, width `w`, centers on an
    /// equilateral triangle with side length `r` around the origin.
    pub fn three_bumps(a: f64, w: f64, r: f64) -> Self {
        let circ = r / 3f64.sqrt();
        let bumps = (0..3)
            .map(|k| {
                let phi = std::f64::consts::FRAC_PI_2 + (k as f64) * 2.0 * std::f64::consts::FRAC_PI_3;
                Bump {
                    amplitude: a,
                    center: vec![circ * phi.cos(), circ * phi.sin()],
                    width: w,
                    poly: None,
                }
            })
            .collect();
        PotentialSpec { format: 1, kind: PotentialKind::GaussianSum, bumps, dimension: 2 }
    }

    fn poly_eval(coeffs: &[f64], u: f64) -> (f64, f64, f64) {
        // value, first and second derivative in u
        let (mut p, mut dp, mut ddp) = (0.0, 0.0, 0.0);
        for &c in coeffs.iter().rev() {
            ddp = ddp * u + 2.0 * dp;
            dp = dp * u + p;
            p = p * u + c;
        }
        (p, dp, ddp)
    }

    /// Potential value at a real point.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dimension);
        match self.kind {
            PotentialKind::Eckart => {
                let b = &self.bumps[0];
                let u = (x[0] - b.center[0]) / b.width;
                let s = 1.0 / u.cosh();
                b.amplitude * s * s
            }
            _ => {
                let mut v = 0.0;
                for b in &self.bumps {
                    let mut u = 0.0;
                    for (xi, ci) in x.iter().zip(&b.center) {
                        u += (xi - ci) * (xi - ci);
                    }
                    u /= b.width * b.width;
                    let p = match &b.poly {
                        Some(c) => Self::poly_eval(c, u).0,
                        None => 1.0,
                    };
                    v += b.amplitude * p * (-u).exp();
                }
                v
            }
        }
    }

    /// Gradient of the potential at a real point, written into `out`.
    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dimension);
        out[..self.dimension].fill(0.0);
        match self.kind {
            PotentialKind::Eckart => {
                let b = &self.bumps[0];
                let u = (x[0] - b.center[0]) / b.width;
                let s = 1.0 / u.cosh();
                out[0] = -2.0 * b.amplitude * s * s * u.tanh() / b.width;
            }
            _ => {
                for b in &self.bumps {
                    let w2 = b.width * b.width;
                    let mut u = 0.0;
                    for (xi, ci) in x.iter().zip(&b.center) {
                        u += (xi - ci) * (xi - ci);
                    }
                    u /= w2;
                    let (p, dp, _) = match &b.poly {
                        Some(c) => Self::poly_eval(c, u),
                        None => (1.0, 0.0, 0.0),
                    };
                    let fac = b.amplitude * (dp - p) * (-u).exp() * 2.0 / w2;
                    for k in 0..self.dimension {
                        out[k] += fac * (x[k] - b.center[k]);
                    }
                }
            }
        }
    }

    /// Hessian of the potential at a real point, written into `out`
    /// (row-major `dimension x dimension`).
    pub fn hess(&self, x: &[f64], out: &mut [[f64; 2]; 2]) {
        let n = self.dimension;
        for row in out.iter_mut() {
            row.fill(0.0);
        }
        match self.kind {
            PotentialKind::Eckart => {
                let b = &self.bumps[0];
                let u = (x[0] - b.center[0]) / b.width;
                let s2 = 1.0 / (u.cosh() * u.cosh());
                let t = u.tanh();
                out[0][0] = b.amplitude * (4.0 * s2 * t * t - 2.0 * s2 * s2) / (b.width * b.width);
            }
            _ => {
                for b in &self.bumps {
                    let w2 = b.width * b.width;
                    let mut u = 0.0;
                    for (xi, ci) in x.iter().zip(&b.center) {
                        u += (xi - ci) * (xi - ci);
                    }
                    u /= w2;
                    let (p, dp, ddp) = match &b.poly {
                        Some(c) => Self::poly_eval(c, u),
                        None => (1.0, 0.0, 0.0),
                    };
                    let e = (-u).exp();
                    let quad = b.amplitude * (ddp - 2.0 * dp + p) * e * 4.0 / (w2 * w2);
                    let lin = b.amplitude * (dp - p) * e * 2.0 / w2;
                    for r in 0..n {
                        for c in 0..n {
                            out[r][c] += quad * (x[r] - b.center[r]) * (x[c] - b.center[c]);
                        }
                        out[r][r] += lin;
                    }
                }
            }
        }
    }

    /// Holomorphic extension of the potential to complex coordinates, used by
    /// complex scaling.
    pub fn eval_complex(&self, z: &[C64]) -> C64 {
        debug_assert_eq!(z.len(), self.dimension);
        match self.kind {
            PotentialKind::Eckart => {
                let b = &self.bumps[0];
                let u = (z[0] - b.center[0]) / b.width;
                let s = u.cosh().finv();
                b.amplitude * s * s
            }
            _ => {
                let mut v = C64::default();
                for b in &self.bumps {
                    let mut u = C64::default();
                    for (zi, ci) in z.iter().zip(&b.center) {
                        u += (zi - ci) * (zi - ci);
                    }
                    u /= b.width * b.width;
                    let p = match &b.poly {
                        Some(c) => {
                            let mut acc = C64::default();
                            for &ck in c.iter().rev() {
                                acc = acc * u + ck;
                            }
                            acc
                        }
                        None => C64::new(1.0, 0.0),
                    };
                    v += b.amplitude * p * (-u).exp();
                }
                v
            }
        }
    }

    /// Half-width of the strip around the real axis where the potential is
    /// holomorphic; `None` means entire.
    pub fn analyticity_strip(&self) -> Option<f64> {
        match self.kind {
            // sech^2 has poles at imaginary parts (pi/2 + k pi) * w
            PotentialKind::Eckart => Some(self.bumps[0].width * std::f64::consts::FRAC_PI_2),
            _ => None,
        }
    }

    /// Maximum of `|V|`, located by sampling around the bump centers.
    pub fn max_abs(&self) -> f64 {
        let mut best: f64 = 0.0;
        let n = self.dimension;
        for b in &self.bumps {
            // scan a small box around each center at a few widths
            let m = 41;
            for i in 0..m {
                for j in 0..(if n == 2 { m } else { 1 }) {
                    let mut x = [0.0f64; 2];
                    x[0] = b.center[0] + (i as f64 / (m - 1) as f64 - 0.5) * 4.0 * b.width;
                    if n == 2 {
                        x[1] = b.center[1] + (j as f64 / (m - 1) as f64 - 0.5) * 4.0 * b.width;
                    }
                    best = best.max(self.eval(&x[..n]).abs());
                }
            }
        }
        best.max(self.eval(&vec![0.0; n]).abs())
    }

    /// Effective radius `R0`: smallest radius such that `|V| < tol * max|V|`
    /// outside, found by radial sampling.
    pub fn effective_radius(&self) -> f64 {
        self.radius_where_below(EFFECTIVE_RADIUS_TOL)
    }

    /// Interaction radius: where `|V|` drops below `1e-3` of its peak.  Sets
    /// the box size a quantum grid must enclose; the far tail below this
    /// level is dynamically irrelevant at O(1) energies.
    pub fn interaction_radius(&self) -> f64 {
        self.radius_where_below(1e-3)
    }

    fn radius_where_below(&self, rel_tol: f64) -> f64 {
        let tol = rel_tol * self.max_abs();
        let n = self.dimension;
        let max_c = self
            .bumps
            .iter()
            .map(|b| b.center.iter().map(|c| c * c).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let max_w = self.bumps.iter().map(|b| b.width).fold(0.0, f64::max);
        // conservative outer bound for the scan: Gaussian/sech^2 tails are
        // below any practical tolerance by ~20 widths past the centers
        let r_max = max_c + 30.0 * max_w;
        let n_rays = if n == 1 { 2 } else { 128 };
        let dr = (max_w / 50.0).min(r_max / 2000.0);
        let mut r0: f64 = 0.0;
        for ray in 0..n_rays {
            let (cx, cy) = if n == 1 {
                (if ray == 0 { 1.0 } else { -1.0 }, 0.0)
            } else {
                let phi = 2.0 * std::f64::consts::PI * ray as f64 / n_rays as f64;
                (phi.cos(), phi.sin())
            };
            // walk inward from r_max to the first sample at or above tol
            let steps = (r_max / dr).ceil() as usize;
            for k in (0..=steps).rev() {
                let r = k as f64 * dr;
                let x = [r * cx, r * cy];
                if self.eval(&x[..n]).abs() >= tol {
                    r0 = r0.max(r + dr);
                    break;
                }
            }
        }
        r0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_grad(pot: &PotentialSpec, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let h = 1e-6;
        for k in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += h;
            xm[k] -= h;
            g[k] = (pot.eval(&xp) - pot.eval(&xm)) / (2.0 * h);
        }
        g
    }

    #[test]
    fn test_eckart_barrier_curvature_is_minus_two() {
        let pot = PotentialSpec::standard_eckart();
        let mut hess = [[0.0; 2]; 2];
        pot.hess(&[0.0], &mut hess);
        assert!(
            (hess[0][0] + 2.0).abs() < 1e-14,
            "sech^2 curvature at the top should be -2, got {}",
            hess[0][0]
        );
        assert!((pot.eval(&[0.0]) - 1.0).abs() < 1e-15, "barrier height should be 1");
    }

    #[test]
    fn test_gradient_matches_finite_differences() {
        let pot = PotentialSpec::three_bumps(4.0, 0.3, 2.83);
        for &x in &[[0.3, -0.2], [1.2, 0.7], [-0.5, 1.41], [2.0, 2.0]] {
            let mut g = [0.0; 2];
            pot.grad(&x, &mut g);
            let gf = fd_grad(&pot, &x);
            for k in 0..2 {
                assert!(
                    (g[k] - gf[k]).abs() < 1e-6 * (1.0 + gf[k].abs()),
                    "grad component {} mismatch at {:?}: {} vs {}",
                    k, x, g[k], gf[k]
                );
            }
        }
    }

    #[test]
    fn test_hessian_matches_finite_differences() {
        let pot = PotentialSpec::three_bumps(4.0, 0.3, 2.83);
        let x = [0.4, -0.3];
        let mut hess = [[0.0; 2]; 2];
        pot.hess(&x, &mut hess);
        let h = 1e-5;
        for r in 0..2 {
            for c in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[c] += h;
                xm[c] -= h;
                let mut gp = [0.0; 2];
                let mut gm = [0.0; 2];
                pot.grad(&xp, &mut gp);
                pot.grad(&xm, &mut gm);
                let fd = (gp[r] - gm[r]) / (2.0 * h);
                assert!(
                    (hess[r][c] - fd).abs() < 1e-5 * (1.0 + fd.abs()),
                    "hessian ({r},{c}) mismatch: {} vs {}",
                    hess[r][c], fd
                );
            }
        }
    }

    #[test]
    fn test_polynomial_bump_derivatives() {
        let pot = PotentialSpec {
            format: 1,
            kind: PotentialKind::CustomPolynomialTimesGaussian,
            bumps: vec![Bump {
                amplitude: 2.0,
                center: vec![0.5],
                width: 0.8,
                poly: Some(vec![1.0, -0.3, 0.05]),
            }],
            dimension: 1,
        };
        let x = [0.9];
        let mut g = [0.0; 2];
        pot.grad(&x, &mut g);
        let gf = fd_grad(&pot, &x);
        assert!((g[0] - gf[0]).abs() < 1e-6, "poly-gaussian grad {} vs fd {}", g[0], gf[0]);
    }

    #[test]
    fn test_complex_eval_agrees_on_real_axis() {
        let pot = PotentialSpec::standard_eckart();
        for &x in &[0.0, 0.7, -1.3, 4.0] {
            let zv = pot.eval_complex(&[C64::new(x, 0.0)]);
            assert!((zv.re - pot.eval(&[x])).abs() < 1e-14 && zv.im.abs() < 1e-14);
        }
        let pot2 = PotentialSpec::three_bumps(4.0, 0.3, 2.83);
        let z = [C64::new(0.3, 0.0), C64::new(-0.8, 0.0)];
        let zv = pot2.eval_complex(&z);
        assert!((zv.re - pot2.eval(&[0.3, -0.8])).abs() < 1e-14 && zv.im.abs() < 1e-14);
    }

    #[test]
    fn test_effective_radius_gaussian() {
        // single unit bump: |V| = tol at r = sqrt(ln(1/tol)) ~ 4.7985
        let pot = PotentialSpec {
            format: 1,
            kind: PotentialKind::GaussianSum,
            bumps: vec![Bump { amplitude: 1.0, center: vec![0.0], width: 1.0, poly: None }],
            dimension: 1,
        };
        let r0 = pot.effective_radius();
        let expected = (1.0f64 / EFFECTIVE_RADIUS_TOL).ln().sqrt();
        assert!(
            (r0 - expected).abs() < 0.05,
            "gaussian effective radius {} vs analytic {}",
            r0, expected
        );
    }

    #[test]
    fn test_effective_radius_eckart() {
        // sech^2(u) = tol at u = arccosh(1/sqrt(tol)) ~ 12.206
        let pot = PotentialSpec::standard_eckart();
        let r0 = pot.effective_radius();
        let expected = (1.0 / EFFECTIVE_RADIUS_TOL.sqrt()).acosh();
        assert!(
            (r0 - expected).abs() < 0.05,
            "eckart effective radius {} vs analytic {}",
            r0, expected
        );
    }

    #[test]
    fn test_json_round_trip_and_validation() {
        let text = r#"{
            "format": 1,
            "kind": "gaussian_sum",
            "bumps": [
                {"amplitude": 4.0, "center": [0.0, 1.633], "width": 0.3},
                {"amplitude": 4.0, "center": [-1.414, -0.816], "width": 0.3},
                {"amplitude": 4.0, "center": [1.414, -0.816], "width": 0.3}
            ],
            "dimension": 2
        }"#;
        let pot = PotentialSpec::from_json(text).expect("valid spec rejected");
        let round = serde_json::to_string(&pot).unwrap();
        let pot2 = PotentialSpec::from_json(&round).expect("round trip failed");
        assert_eq!(pot2.bumps.len(), 3);

        let bad = r#"{"format": 2, "kind": "eckart", "bumps": [{"amplitude": 1.0, "center": [0.0], "width": 1.0}], "dimension": 1}"#;
        assert!(PotentialSpec::from_json(bad).is_err(), "wrong format version accepted");

        let bad_dim = r#"{"format": 1, "kind": "eckart", "bumps": [{"amplitude": 1.0, "center": [0.0, 0.0], "width": 1.0}], "dimension": 2}"#;
        assert!(PotentialSpec::from_json(bad_dim).is_err(), "2d eckart accepted");
    }
}
