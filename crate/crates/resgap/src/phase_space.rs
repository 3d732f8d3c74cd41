//! Phase-space localization diagnostics: coherent states, the Gaussian
//! wave-packet transform, Husimi fields, and mass fractions on dynamically
//! defined sets.

use num_complex::Complex64 as C64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::dynamics::potential::PotentialSpec;
use crate::error::{Error, Result};
use crate::quantum::grid::{Boundary, GridSpec};

/// Gaussian coherent state centered at `(x0, xi0)` with width `sqrt(h)`,
/// normalized in the continuum limit.
pub fn coherent_state(grid: &GridSpec, h: f64, x0: &[f64], xi0: &[f64]) -> Vec<C64> {
    let n = grid.dimension;
    assert_eq!(x0.len(), n, "center dimension mismatch");
    assert_eq!(xi0.len(), n, "momentum dimension mismatch");
    let pref = (std::f64::consts::PI * h).powf(-(n as f64) / 4.0);
    grid.nodes()
        .iter()
        .map(|p| {
            let mut phase = 0.0;
            let mut quad = 0.0;
            for d in 0..n {
                phase += p[d] * xi0[d];
                quad += (p[d] - x0[d]) * (p[d] - x0[d]);
            }
            pref * (C64::i() * phase / h - quad / (2.0 * h)).exp()
        })
        .collect()
}

/// `L^2` norm of a grid function (Riemann sum).
pub fn grid_norm(grid: &GridSpec, u: &[C64]) -> f64 {
    let cell = grid.dx().powi(grid.dimension as i32);
    (u.iter().map(|x| x.norm_sqr()).sum::<f64>() * cell).sqrt()
}

/// Husimi field on a rectangular phase-space window: nonnegative values on
/// the tensor grid `x` (outer) by `xi` (inner).
#[derive(Debug, Clone, Serialize)]
pub struct HusimiField {
    pub h: f64,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub values: Vec<f64>,
    /// Riemann mass `sum * dx * dxi / (2 pi h)^n`; equals the squared norm
    /// of the transformed state when the window captures it.
    pub mass: f64,
}

impl HusimiField {
    fn cell(&self) -> f64 {
        let dx = if self.x.len() > 1 { self.x[1] - self.x[0] } else { 1.0 };
        let dxi = if self.xi.len() > 1 { self.xi[1] - self.xi[0] } else { 1.0 };
        dx * dxi
    }

    pub fn value(&self, ix: usize, ixi: usize) -> f64 {
        self.values[ix * self.xi.len() + ixi]
    }

    /// Coordinates of the largest value.
    pub fn peak(&self) -> (f64, f64) {
        let (mut best, mut arg) = (-1.0, (0usize, 0usize));
        for i in 0..self.x.len() {
            for j in 0..self.xi.len() {
                let v = self.value(i, j);
                if v > best {
                    best = v;
                    arg = (i, j);
                }
            }
        }
        (self.x[arg.0], self.xi[arg.1])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,xi,value\n");
        for (i, &xv) in self.x.iter().enumerate() {
            for (j, &kv) in self.xi.iter().enumerate() {
                out.push_str(&format!("{xv:.9e},{kv:.9e},{:.9e}\n", self.value(i, j)));
            }
        }
        out
    }
}

/// Gaussian wave-packet transform of a one-dimensional state, evaluated on
/// `x_centers` by `xi` from the grid's Fourier frequencies (restricted to
/// `|xi| <= xi_max`).  The squared modulus is the Husimi density; its
/// phase-space Riemann sum over `dx dxi / (2 pi h)` recovers the squared
/// norm of the state.
pub fn fbi_transform(
    grid: &GridSpec,
    h: f64,
    u: &[C64],
    x_centers: &[f64],
    xi_max: f64,
) -> Result<HusimiField> {
    if grid.dimension != 1 {
        return Err(Error::Config(
            "the wave-packet transform is one-dimensional; use a slice in 2D".into(),
        ));
    }
    if grid.boundary != Boundary::PeriodicFourier {
        return Err(Error::Config("the wave-packet transform needs a periodic grid".into()));
    }
    if u.len() != grid.points {
        return Err(Error::Config("state length does not match the grid".into()));
    }
    let n = grid.points;
    let axis = grid.axis();
    let dy = grid.dx();
    // momenta xi = h k for the FFT wavenumbers k, reordered increasing
    let ks = grid.wavenumbers();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ks[a].partial_cmp(&ks[b]).expect("finite wavenumbers"));
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&m| (h * ks[m]).abs() <= xi_max)
        .collect();
    if kept.is_empty() {
        return Err(Error::Config(format!("no Fourier momenta under xi_max={xi_max}")));
    }
    let xi: Vec<f64> = kept.iter().map(|&m| h * ks[m]).collect();

    let c_h = (std::f64::consts::PI * h).powf(-0.25);
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut values = vec![0.0f64; x_centers.len() * xi.len()];
    let mut buf = vec![C64::new(0.0, 0.0); n];
    for (i, &xc) in x_centers.iter().enumerate() {
        for (j, (&y, &uj)) in axis.iter().zip(u).enumerate() {
            let w = (-(xc - y) * (xc - y) / (2.0 * h)).exp();
            buf[j] = uj * w;
        }
        fft.process(&mut buf);
        // |T u(xc, h k_m)| = c_h dy |FFT[w u]_m| (phases drop)
        for (jj, &m) in kept.iter().enumerate() {
            let amp = c_h * dy * buf[m].norm();
            values[i * xi.len() + jj] = amp * amp;
        }
    }

    let dx = if x_centers.len() > 1 { x_centers[1] - x_centers[0] } else { 1.0 };
    let dxi = if xi.len() > 1 { xi[1] - xi[0] } else { 1.0 };
    let mass = values.iter().sum::<f64>() * dx * dxi / (2.0 * std::f64::consts::PI * h);
    Ok(HusimiField { h, x: x_centers.to_vec(), xi, values, mass })
}

/// Fraction of the Husimi mass lying within distance `delta` of the set
/// described by `dist`, both numerator and denominator restricted to the
/// cells selected by `window`.
pub fn mass_fraction_on_set(
    field: &HusimiField,
    dist: impl Fn(f64, f64) -> f64,
    delta: f64,
    window: impl Fn(f64, f64) -> bool,
) -> f64 {
    let mut on = 0.0;
    let mut total = 0.0;
    for (i, &xv) in field.x.iter().enumerate() {
        for (j, &kv) in field.xi.iter().enumerate() {
            if !window(xv, kv) {
                continue;
            }
            let v = field.value(i, j);
            total += v;
            if dist(xv, kv) <= delta {
                on += v;
            }
        }
    }
    let _ = field.cell(); // mass cancels in the ratio
    if total > 0.0 {
        on / total
    } else {
        0.0
    }
}

/// Distance in phase space to the outgoing branch of the unstable manifold
/// of the barrier-top fixed point, for the single-barrier potential.  The
/// branch is the curve `xi = A tanh(x / w)` on the energy shell at the
/// barrier height; distance is measured to a dense polyline.
pub fn unstable_branch_distance(pot: &PotentialSpec, span: f64) -> impl Fn(f64, f64) -> f64 {
    let amp = pot.bumps[0].amplitude.sqrt();
    let w = pot.bumps[0].width;
    let m = 4000;
    let pts: Vec<(f64, f64)> = (0..=m)
        .map(|i| {
            let x = -span + 2.0 * span * i as f64 / m as f64;
            (x, amp * (x / w).tanh())
        })
        .collect();
    move |x: f64, xi: f64| {
        pts.iter()
            .map(|&(px, pxi)| ((x - px).powi(2) + (xi - pxi).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Quantum vs classical decay-rate comparison for a leading resonance.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DecayRateCheck {
    /// `-2 Im z / h`: twice the resonance width in units of `h`.
    pub quantum: f64,
    /// Expansion rate of the classical flow on the trapped set.
    pub classical: f64,
    pub ratio: f64,
}

pub fn decay_rate_check(z: C64, h: f64, lambda_classical: f64) -> DecayRateCheck {
    let quantum = -2.0 * z.im / h;
    DecayRateCheck { quantum, classical: lambda_classical, ratio: quantum / lambda_classical }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(points: usize) -> GridSpec {
        GridSpec {
            dimension: 1,
            half_width: 10.0,
            points,
            boundary: Boundary::PeriodicFourier,
        }
    }

    #[test]
    fn test_coherent_state_is_normalized() {
        let g = grid(512);
        let h = 0.1;
        let u = coherent_state(&g, h, &[1.0], &[0.5]);
        let nrm = grid_norm(&g, &u);
        assert!((nrm - 1.0).abs() < 1e-10, "norm {nrm}");
    }

    #[test]
    fn test_transform_mass_recovers_state_norm() {
        let g = grid(512);
        let h = 0.1;
        let u = coherent_state(&g, h, &[0.5], &[-0.3]);
        let centers: Vec<f64> = (0..200).map(|i| -6.0 + 12.0 * i as f64 / 199.0).collect();
        let field = fbi_transform(&g, h, &u, &centers, 2.5).expect("transform");
        assert!(
            (field.mass - 1.0).abs() < 1e-6,
            "phase-space mass {} should match squared norm 1",
            field.mass
        );
    }

    #[test]
    fn test_husimi_peak_tracks_the_center() {
        let g = grid(512);
        let h = 0.05;
        for (x0, xi0) in [(0.0, 0.8), (1.5, -0.4), (-2.0, 0.0)] {
            let u = coherent_state(&g, h, &[x0], &[xi0]);
            let centers: Vec<f64> = (0..400).map(|i| -5.0 + 10.0 * i as f64 / 399.0).collect();
            let field = fbi_transform(&g, h, &u, &centers, 2.0).expect("transform");
            let (px, pxi) = field.peak();
            assert!(
                (px - x0).abs() < 0.05 && (pxi - xi0).abs() < 0.05,
                "peak ({px}, {pxi}) far from center ({x0}, {xi0})"
            );
        }
    }

    #[test]
    fn test_plane_wave_localizes_at_its_momentum() {
        let g = grid(512);
        let h = 0.1;
        let k = 7.0 * std::f64::consts::PI / g.half_width;
        let u: Vec<C64> = g.axis().iter().map(|&x| (C64::i() * k * x).exp()).collect();
        let centers: Vec<f64> = (0..100).map(|i| -4.0 + 8.0 * i as f64 / 99.0).collect();
        let field = fbi_transform(&g, h, &u, &centers, 2.5).expect("transform");
        let (_, pxi) = field.peak();
        assert!(
            (pxi - h * k).abs() < 0.05,
            "momentum peak {pxi} should sit at h k = {}",
            h * k
        );
    }

    #[test]
    fn test_mass_fraction_window_restricts_both_sides() {
        let field = HusimiField {
            h: 0.1,
            x: vec![0.0, 1.0],
            xi: vec![0.0, 1.0],
            values: vec![1.0, 1.0, 1.0, 5.0],
            mass: 1.0,
        };
        // window keeps only x = 0 cells; set covers xi = 0
        let f = mass_fraction_on_set(
            &field,
            |_, xi| xi.abs(),
            0.1,
            |x, _| x < 0.5,
        );
        assert!((f - 0.5).abs() < 1e-12, "fraction {f}, expected 1/2 inside the window");
    }

    #[test]
    fn test_coherent_state_on_branch_scores_high_fraction() {
        let g = grid(512);
        let h = 0.0625;
        let pot = PotentialSpec::standard_eckart();
        // point on the outgoing branch far from the fixed point
        let x0 = 1.2f64;
        let xi0 = x0.tanh();
        let u = coherent_state(&g, h, &[x0], &[xi0]);
        let centers: Vec<f64> = (0..300).map(|i| -4.0 + 8.0 * i as f64 / 299.0).collect();
        let field = fbi_transform(&g, h, &u, &centers, 2.0).expect("transform");
        let dist = unstable_branch_distance(&pot, 6.0);
        let frac = mass_fraction_on_set(&field, dist, 3.0 * h.sqrt(), |_, _| true);
        assert!(frac > 0.9, "on-branch coherent state scored only {frac}");
        let off = coherent_state(&g, h, &[0.0], &[1.4]);
        let field_off = fbi_transform(&g, h, &off, &centers, 2.0).expect("transform");
        let dist2 = unstable_branch_distance(&pot, 6.0);
        let frac_off = mass_fraction_on_set(&field_off, dist2, 3.0 * h.sqrt(), |_, _| true);
        assert!(frac_off < 0.2, "off-branch coherent state scored {frac_off}");
    }

    #[test]
    fn test_decay_rate_check_reports_ratio() {
        let z = C64::new(1.0, -0.0625);
        let c = decay_rate_check(z, 0.0625, 2.0);
        assert!((c.quantum - 2.0).abs() < 1e-12);
        assert!((c.ratio - 1.0).abs() < 1e-12);
    }
}
