//! Assembly of the discretized Schrodinger operator `-h^2 Lap + V`, with an
//! optional absorbing potential or complex-scaling deformation applied.
//!
//! Periodic grids get an exact spectral kinetic term (a circulant matrix in
//! dense form, an FFT pair in matrix-free form).  Dirichlet grids use order-4
//! central stencils truncated at the walls.  Exterior scaling is assembled in
//! the symmetrized form `-h^2 g^{-1/2} d (1/g) d g^{-1/2}` with `g = 1 + iF'`,
//! which is similar to the contour-restricted operator and keeps the matrix
//! complex symmetric.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::grid::{Boundary, CapSpec, GridSpec, ScalingMode, ScalingSpec};
use super::lapack::BandMatrix;
use crate::dynamics::potential::PotentialSpec;
use crate::error::{Error, Result};

/// Order-4 second-derivative stencil (times `1/dx^2`).
const D2: [f64; 5] = [-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0];
/// Order-4 first-derivative stencil (times `1/dx`); antisymmetric.
const D1: [f64; 5] = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];

/// Dirichlet walls use an antisymmetric extension: the ghost one step past
/// the wall mirrors the first interior value with flipped sign, which keeps
/// the second-derivative stencil order-4 at the boundary.  It folds into a
/// diagonal correction on the outermost interior nodes.
fn mirror_weight(j: usize, n: usize) -> f64 {
    if j == 0 || j + 1 == n {
        1.0 / 12.0
    } else {
        0.0
    }
}

/// Non-selfadjoint deformation attached to the operator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Deformation {
    None,
    Cap(CapSpec),
    Scaling(ScalingSpec),
}

impl Deformation {
    /// Method label used in resonance tables.
    pub fn method_name(&self) -> &'static str {
        match self {
            Deformation::None => "none",
            Deformation::Cap(_) => "cap",
            Deformation::Scaling(_) => "scaling",
        }
    }

    /// Numeric deformation parameter (scaling angle or absorber strength).
    pub fn parameter(&self) -> f64 {
        match self {
            Deformation::None => 0.0,
            Deformation::Cap(c) => c.strength,
            Deformation::Scaling(s) => s.theta,
        }
    }
}

enum Kinetic {
    /// `h^2 k^2` multiplier in Fourier space (with any scaling prefactor
    /// folded in); the matrix is the corresponding circulant.
    Spectral {
        symbol: Vec<C64>,
        fft: Arc<dyn Fft<f64>>,
        ifft: Arc<dyn Fft<f64>>,
    },
    /// Constant-coefficient `c2 * D2` per axis.
    Stencil { c2: C64 },
    /// Variable-coefficient symmetrized contour form `-h^2 S D1 T D1 S`
    /// with diagonal `S = g^{-1/2}`, `T = 1/g`.
    Contour { s: Vec<C64>, t: Vec<C64>, h2: f64 },
}

/// Discretized (possibly deformed) operator ready for eigensolves, linear
/// solves, and matrix-free application.
pub struct QuantumOp {
    pub grid: GridSpec,
    pub h: f64,
    pub deformation: Deformation,
    diag: Vec<C64>,
    kin: Kinetic,
}

impl QuantumOp {
    /// Build the operator for `pot` on `grid` at Planck parameter `h`.
    ///
    /// Rejects configurations the discretization cannot represent: fewer
    /// than 4 points per semiclassical wavelength, a box that does not
    /// contain the interaction region and absorber, global scaling of a
    /// potential with no analytic continuation, or exterior scaling off a
    /// one-dimensional Dirichlet grid.
    pub fn assemble(
        pot: &PotentialSpec,
        grid: GridSpec,
        h: f64,
        deformation: Deformation,
    ) -> Result<QuantumOp> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Config(format!("h must be positive, got {h}")));
        }
        if pot.dimension != grid.dimension {
            return Err(Error::Config(format!(
                "potential dimension {} does not match grid dimension {}",
                pot.dimension, grid.dimension
            )));
        }
        let cap = match &deformation {
            Deformation::Cap(c) => {
                c.validate()?;
                Some(c)
            }
            Deformation::Scaling(s) => {
                s.validate()?;
                None
            }
            Deformation::None => None,
        };
        grid.validate_against(pot.interaction_radius(), cap)?;
        let ppw = grid.points_per_wavelength(h);
        if ppw < 4.0 {
            return Err(Error::Config(format!(
                "grid resolves only {ppw:.2} points per wavelength at h={h}; need at least 4"
            )));
        }
        match &deformation {
            Deformation::Scaling(s) => match s.mode {
                ScalingMode::Global => {
                    if pot.analyticity_strip().is_none() {
                        return Err(Error::Config(
                            "global scaling needs a potential with an analytic continuation".into(),
                        ));
                    }
                }
                ScalingMode::Exterior { r0 } => {
                    if grid.boundary != Boundary::DirichletFd || grid.dimension != 1 {
                        return Err(Error::Config(
                            "exterior scaling is implemented on one-dimensional Dirichlet grids".into(),
                        ));
                    }
                    if 2.0 * r0 >= grid.half_width {
                        return Err(Error::Config(format!(
                            "exterior scaling blend [{r0}, {}] must finish inside the box",
                            2.0 * r0
                        )));
                    }
                }
            },
            Deformation::Cap(_) | Deformation::None => {}
        }
        if grid.boundary == Boundary::PeriodicFourier && grid.dimension != 1 {
            return Err(Error::Config(
                "spectral assembly is one-dimensional; use dirichlet_fd in 2D".into(),
            ));
        }

        let nodes = grid.nodes();
        let dim = grid.dimension;
        let mut diag = Vec::with_capacity(nodes.len());
        for node in &nodes {
            let v = match &deformation {
                Deformation::None => C64::new(pot.eval(&node[..dim]), 0.0),
                Deformation::Cap(c) => {
                    let r = if dim == 1 { node[0].abs() } else { node[0].hypot(node[1]) };
                    C64::new(pot.eval(&node[..dim]), -c.eval(r))
                }
                Deformation::Scaling(s) => match s.mode {
                    ScalingMode::Global => {
                        let rot = C64::from_polar(1.0, s.theta);
                        let z: Vec<C64> = node[..dim].iter().map(|&x| rot * x).collect();
                        pot.eval_complex(&z)
                    }
                    ScalingMode::Exterior { .. } => {
                        let z = [C64::new(node[0], s.contour(node[0]))];
                        pot.eval_complex(&z)
                    }
                },
            };
            diag.push(v);
        }

        let kin = match grid.boundary {
            Boundary::PeriodicFourier => {
                let pref = match &deformation {
                    Deformation::Scaling(s) => (-C64::i() * 2.0 * s.theta).exp(),
                    _ => C64::new(1.0, 0.0),
                };
                let symbol = grid
                    .wavenumbers()
                    .iter()
                    .map(|&k| pref * h * h * k * k)
                    .collect();
                let mut planner = FftPlanner::new();
                Kinetic::Spectral {
                    symbol,
                    fft: planner.plan_fft_forward(grid.points),
                    ifft: planner.plan_fft_inverse(grid.points),
                }
            }
            Boundary::DirichletFd => match &deformation {
                Deformation::Scaling(s) if matches!(s.mode, ScalingMode::Exterior { .. }) => {
                    let axis = grid.axis();
                    let g: Vec<C64> = axis
                        .iter()
                        .map(|&x| C64::new(1.0, s.contour_slope(x)))
                        .collect();
                    Kinetic::Contour {
                        s: g.iter().map(|&gi| gi.sqrt().finv()).collect(),
                        t: g.iter().map(|&gi| gi.finv()).collect(),
                        h2: h * h,
                    }
                }
                Deformation::Scaling(s) => {
                    Kinetic::Stencil { c2: -h * h * (-C64::i() * 2.0 * s.theta).exp() }
                }
                _ => Kinetic::Stencil { c2: C64::new(-h * h, 0.0) },
            },
        };

        Ok(QuantumOp { grid, h, deformation, diag, kin })
    }

    /// Number of unknowns.
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// Multiplication-operator part (deformed potential minus `i W`).
    pub fn diagonal(&self) -> &[C64] {
        &self.diag
    }

    /// Matrix bandwidth of the Dirichlet assembly (`kl = ku`).
    pub fn bandwidth(&self) -> usize {
        match &self.kin {
            Kinetic::Spectral { .. } => self.n() - 1,
            Kinetic::Stencil { .. } => {
                if self.grid.dimension == 1 {
                    2
                } else {
                    2 * self.grid.points
                }
            }
            Kinetic::Contour { .. } => 4,
        }
    }

    /// Apply the operator to a state vector (matrix-free).
    pub fn apply(&self, psi: &[C64]) -> Vec<C64> {
        assert_eq!(psi.len(), self.n(), "state length mismatch");
        let mut out: Vec<C64> = match &self.kin {
            Kinetic::Spectral { symbol, fft, ifft } => {
                let mut buf = psi.to_vec();
                fft.process(&mut buf);
                for (b, &s) in buf.iter_mut().zip(symbol) {
                    *b *= s;
                }
                ifft.process(&mut buf);
                let scale = 1.0 / self.grid.points as f64;
                for b in &mut buf {
                    *b *= scale;
                }
                buf
            }
            Kinetic::Stencil { c2 } => {
                let dx = self.grid.dx();
                let w = c2 / (dx * dx);
                let n = self.grid.points;
                let mut buf = vec![C64::new(0.0, 0.0); psi.len()];
                if self.grid.dimension == 1 {
                    stencil_axis(psi, &mut buf, n, 1, w);
                } else {
                    stencil_axis(psi, &mut buf, n, n, w);
                    for row in 0..n {
                        stencil_axis(
                            &psi[row * n..(row + 1) * n],
                            &mut buf[row * n..(row + 1) * n],
                            n,
                            1,
                            w,
                        );
                    }
                }
                buf
            }
            Kinetic::Contour { s, t, h2 } => {
                let dx = self.grid.dx();
                let a: Vec<C64> = psi.iter().zip(s).map(|(&p, &si)| p * si).collect();
                let da = d1_apply(&a, dx);
                let tda: Vec<C64> = da.iter().zip(t).map(|(&p, &ti)| p * ti).collect();
                let dtda = d1_apply(&tda, dx);
                dtda.iter().zip(s).map(|(&p, &si)| -h2 * p * si).collect()
            }
        };
        for ((o, &d), &p) in out.iter_mut().zip(&self.diag).zip(psi) {
            *o += d * p;
        }
        out
    }

    /// `||A v - z v|| / (||v|| max(1, |z|))`.
    pub fn residual(&self, z: C64, v: &[C64]) -> f64 {
        let av = self.apply(v);
        let mut num = 0.0;
        let mut den = 0.0;
        for (&a, &vi) in av.iter().zip(v) {
            num += (a - z * vi).norm_sqr();
            den += vi.norm_sqr();
        }
        (num / den).sqrt() / z.norm().max(1.0)
    }

    /// Dense column-major matrix for direct eigensolves.
    pub fn dense(&self) -> Result<Vec<C64>> {
        let n = self.n();
        if n > 4608 {
            return Err(Error::Config(format!(
                "dense assembly capped at 4608 unknowns, got {n}; use shift-invert"
            )));
        }
        let mut a = vec![C64::new(0.0, 0.0); n * n];
        match &self.kin {
            Kinetic::Spectral { symbol, ifft, .. } => {
                // first circulant column = inverse FFT of the symbol
                let mut col0 = symbol.clone();
                ifft.process(&mut col0);
                let scale = 1.0 / n as f64;
                for c in &mut col0 {
                    *c *= scale;
                }
                for j in 0..n {
                    for l in 0..n {
                        a[j * n + l] = col0[(l + n - j) % n];
                    }
                }
            }
            Kinetic::Stencil { c2 } => {
                let dx = self.grid.dx();
                let w = c2 / (dx * dx);
                let np = self.grid.points;
                if self.grid.dimension == 1 {
                    for j in 0..n {
                        for (off, &d) in D2.iter().enumerate() {
                            let i = j as isize + off as isize - 2;
                            if (0..n as isize).contains(&i) {
                                a[j * n + i as usize] += w * d;
                            }
                        }
                        a[j * n + j] += w * mirror_weight(j, n);
                    }
                } else {
                    for jx in 0..np {
                        for jy in 0..np {
                            let j = jx * np + jy;
                            for (off, &d) in D2.iter().enumerate() {
                                let o = off as isize - 2;
                                let ix = jx as isize + o;
                                if (0..np as isize).contains(&ix) {
                                    a[j * n + ix as usize * np + jy] += w * d;
                                }
                                let iy = jy as isize + o;
                                if (0..np as isize).contains(&iy) {
                                    a[j * n + jx * np + iy as usize] += w * d;
                                }
                            }
                            a[j * n + j] +=
                                w * (mirror_weight(jx, np) + mirror_weight(jy, np));
                        }
                    }
                }
            }
            Kinetic::Contour { .. } => {
                // probe columns through the matrix-free apply
                let mut e = vec![C64::new(0.0, 0.0); n];
                for j in 0..n {
                    e[j] = C64::new(1.0, 0.0);
                    let col = self.apply(&e);
                    e[j] = C64::new(0.0, 0.0);
                    a[j * n..(j + 1) * n].copy_from_slice(&col);
                }
                return Ok(a); // diagonal already applied
            }
        }
        for j in 0..n {
            a[j * n + j] += self.diag[j];
        }
        Ok(a)
    }

    /// Banded storage of `A - sigma I` ready for LU, for Dirichlet grids.
    pub fn band_shifted(&self, sigma: C64) -> Result<BandMatrix> {
        let n = self.n();
        let kb = self.bandwidth();
        match &self.kin {
            Kinetic::Spectral { .. } => Err(Error::Config(
                "banded solves need a dirichlet_fd grid; the spectral operator is dense".into(),
            )),
            Kinetic::Stencil { c2 } => {
                let dx = self.grid.dx();
                let w = c2 / (dx * dx);
                let np = self.grid.points;
                let mut band = BandMatrix::zeros(n, kb, kb);
                if self.grid.dimension == 1 {
                    for j in 0..n {
                        for (off, &d) in D2.iter().enumerate() {
                            let i = j as isize + off as isize - 2;
                            if (0..n as isize).contains(&i) {
                                band.add(i as usize, j, w * d);
                            }
                        }
                        band.add(j, j, w * mirror_weight(j, n) + self.diag[j] - sigma);
                    }
                } else {
                    for jx in 0..np {
                        for jy in 0..np {
                            let j = jx * np + jy;
                            for (off, &d) in D2.iter().enumerate() {
                                let o = off as isize - 2;
                                let ix = jx as isize + o;
                                if (0..np as isize).contains(&ix) {
                                    band.add(ix as usize * np + jy, j, w * d);
                                }
                                let iy = jy as isize + o;
                                if (0..np as isize).contains(&iy) {
                                    band.add(jx * np + iy as usize, j, w * d);
                                }
                            }
                            let mw = mirror_weight(jx, np) + mirror_weight(jy, np);
                            band.add(j, j, w * mw + self.diag[j] - sigma);
                        }
                    }
                }
                Ok(band)
            }
            Kinetic::Contour { .. } => {
                let n_ = n;
                let mut band = BandMatrix::zeros(n_, kb, kb);
                let mut e = vec![C64::new(0.0, 0.0); n_];
                for j in 0..n_ {
                    e[j] = C64::new(1.0, 0.0);
                    let col = self.apply(&e);
                    e[j] = C64::new(0.0, 0.0);
                    let lo = j.saturating_sub(kb);
                    let hi = (j + kb + 1).min(n_);
                    for (i, &c) in col.iter().enumerate().take(hi).skip(lo) {
                        let val = if i == j { c - sigma } else { c };
                        if val.norm_sqr() > 0.0 {
                            band.add(i, j, val);
                        }
                    }
                }
                Ok(band)
            }
        }
    }
}

/// Add `w * D2` along one axis of stride `stride` for `n` points per line.
fn stencil_axis(src: &[C64], dst: &mut [C64], n: usize, stride: usize, w: C64) {
    let nlines = src.len() / n;
    for line in 0..nlines {
        // stride-1 lines are contiguous blocks; stride-n lines interleave
        let base = if stride == 1 { line * n } else { line };
        for j in 0..n {
            let idx = base + j * stride;
            let mut acc = C64::new(0.0, 0.0);
            for (off, &d) in D2.iter().enumerate() {
                let i = j as isize + off as isize - 2;
                if (0..n as isize).contains(&i) {
                    acc += d * src[base + i as usize * stride];
                }
            }
            acc += mirror_weight(j, n) * src[idx];
            dst[idx] += w * acc;
        }
    }
}

/// Order-4 antisymmetric first derivative with Dirichlet truncation.
fn d1_apply(src: &[C64], dx: f64) -> Vec<C64> {
    let n = src.len();
    let mut out = vec![C64::new(0.0, 0.0); n];
    for j in 0..n {
        let mut acc = C64::new(0.0, 0.0);
        for (off, &d) in D1.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let i = j as isize + off as isize - 2;
            if (0..n as isize).contains(&i) {
                acc += d * src[i as usize];
            }
        }
        out[j] = acc / dx;
    }
    out
}
