//! Grid, absorbing-potential, and complex-scaling specifications shared by
//! the discretized operators.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Discretization boundary treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Equispaced periodic grid; derivatives are spectral (exact for the
    /// resolved modes).
    PeriodicFourier,
    /// Interior nodes of a box with zero boundary values; derivatives are
    /// order-4 central stencils truncated at the walls.
    DirichletFd,
}

/// Computational box `[-L, L]^n` with `points` nodes per axis.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    pub dimension: usize,
    /// Box half-width `L`.
    pub half_width: f64,
    /// Nodes per axis.
    pub points: usize,
    pub boundary: Boundary,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dimension != 1 && self.dimension != 2 {
            return Err(Error::Config(format!("grid dimension must be 1 or 2, got {}", self.dimension)));
        }
        if !(self.half_width > 0.0) || !self.half_width.is_finite() {
            return Err(Error::Config("grid half-width must be positive".into()));
        }
        if self.points < 8 {
            return Err(Error::Config("grid needs at least 8 points per axis".into()));
        }
        if self.boundary == Boundary::PeriodicFourier && !self.points.is_power_of_two() {
            return Err(Error::Config(format!(
                "periodic Fourier grids need a power-of-two point count, got {}",
                self.points
            )));
        }
        Ok(())
    }

    /// The box must contain the interaction region plus the full absorber.
    pub fn validate_against(&self, escape_radius: f64, cap: Option<&CapSpec>) -> Result<()> {
        self.validate()?;
        let needed = escape_radius + cap.map_or(0.0, |c| 4.0 * c.ramp_width);
        if self.half_width < needed {
            return Err(Error::Config(format!(
                "grid half-width {} too small: needs escape radius {} plus absorber room (total {:.3})",
                self.half_width, escape_radius, needed
            )));
        }
        Ok(())
    }

    /// Wavelength-resolution proxy `N h / (2 L)`; must be at least 4 for the
    /// semiclassical wavelength at the working energy to be resolved.
    pub fn points_per_wavelength(&self, h: f64) -> f64 {
        self.points as f64 * h / (2.0 * self.half_width)
    }

    pub fn dx(&self) -> f64 {
        match self.boundary {
            Boundary::PeriodicFourier => 2.0 * self.half_width / self.points as f64,
            Boundary::DirichletFd => 2.0 * self.half_width / (self.points as f64 + 1.0),
        }
    }

    /// Axis nodes (shared by every axis).
    pub fn axis(&self) -> Vec<f64> {
        let dx = self.dx();
        match self.boundary {
            Boundary::PeriodicFourier => {
                (0..self.points).map(|j| -self.half_width + j as f64 * dx).collect()
            }
            Boundary::DirichletFd => {
                (0..self.points).map(|j| -self.half_width + (j as f64 + 1.0) * dx).collect()
            }
        }
    }

    /// Fourier wavenumbers in FFT layout (`k_m = pi m / L`, wrapped signs).
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.points as i64;
        (0..n)
            .map(|m| {
                let m_signed = if m < n / 2 { m } else { m - n };
                std::f64::consts::PI * m_signed as f64 / self.half_width
            })
            .collect()
    }

    /// Total unknowns.
    pub fn len(&self) -> usize {
        self.points.pow(self.dimension as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All grid nodes in lexicographic order (1D: the axis; 2D: `x` outer,
    /// `y` inner).
    pub fn nodes(&self) -> Vec<[f64; 2]> {
        let ax = self.axis();
        match self.dimension {
            1 => ax.iter().map(|&x| [x, 0.0]).collect(),
            _ => {
                let mut out = Vec::with_capacity(self.len());
                for &x in &ax {
                    for &y in &ax {
                        out.push([x, y]);
                    }
                }
                out
            }
        }
    }
}

/// C2 monotone ramp: 0 at 0, 1 at 1, flat at both ends.
pub fn ramp(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

/// Complex absorbing potential `W`: zero inside `|x| <= inner_radius`,
/// rising smoothly to `strength` across a ramp of width `ramp_width`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CapSpec {
    pub inner_radius: f64,
    pub ramp_width: f64,
    pub strength: f64,
}

impl CapSpec {
    pub fn new(inner_radius: f64, ramp_width: f64) -> Self {
        CapSpec { inner_radius, ramp_width, strength: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inner_radius > 0.0 && self.ramp_width > 0.0) {
            return Err(Error::Config("absorber radii must be positive".into()));
        }
        if self.strength < 0.0 {
            return Err(Error::Config("absorber strength must be nonnegative".into()));
        }
        Ok(())
    }

    /// `W(x)` at radius `r = |x|`.
    pub fn eval(&self, r: f64) -> f64 {
        self.strength * ramp((r - self.inner_radius) / self.ramp_width)
    }
}

/// Complex-scaling contour selection.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ScalingMode {
    /// `x -> e^{i theta} x` everywhere; needs a potential holomorphic along
    /// the rotated rays.
    Global,
    /// Contour `x + i F(x)` deforming only `|x| > r0`.
    Exterior { r0: f64 },
}

/// Complex-scaling deformation of angle `theta`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScalingSpec {
    pub theta: f64,
    #[serde(flatten)]
    pub mode: ScalingMode,
}

impl ScalingSpec {
    pub fn global(theta: f64) -> Self {
        ScalingSpec { theta, mode: ScalingMode::Global }
    }

    pub fn exterior(theta: f64, r0: f64) -> Self {
        ScalingSpec { theta, mode: ScalingMode::Exterior { r0 } }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < std::f64::consts::FRAC_PI_4) {
            return Err(Error::Config(format!(
                "scaling angle must lie in (0, pi/4), got {}",
                self.theta
            )));
        }
        if let ScalingMode::Exterior { r0 } = self.mode {
            if !(r0 > 0.0) {
                return Err(Error::Config("exterior scaling radius must be positive".into()));
            }
        }
        Ok(())
    }

    /// Contour height `F(x)`: zero on `|x| <= r0`, `tan(theta) x` beyond
    /// `2 r0`, quintic blend between (value, slope, and curvature matched at
    /// both seams).  Global mode has no contour.
    pub fn contour(&self, x: f64) -> f64 {
        let ScalingMode::Exterior { r0 } = self.mode else {
            return 0.0;
        };
        let u = x.abs();
        let t = self.theta.tan();
        let f = if u <= r0 {
            0.0
        } else if u >= 2.0 * r0 {
            t * u
        } else {
            let s = (u - r0) / r0;
            r0 * t * (16.0 - (23.0 - 9.0 * s) * s) * s * s * s
        };
        f * x.signum()
    }

    /// `F'(x)` (even in `x`).
    pub fn contour_slope(&self, x: f64) -> f64 {
        let ScalingMode::Exterior { r0 } = self.mode else {
            return 0.0;
        };
        let u = x.abs();
        let t = self.theta.tan();
        if u <= r0 {
            0.0
        } else if u >= 2.0 * r0 {
            t
        } else {
            let s = (u - r0) / r0;
            t * (48.0 - (92.0 - 45.0 * s) * s) * s * s
        }
    }

    /// `F''(x)` (odd in `x`).
    pub fn contour_curvature(&self, x: f64) -> f64 {
        let ScalingMode::Exterior { r0 } = self.mode else {
            return 0.0;
        };
        let u = x.abs();
        let t = self.theta.tan();
        let f = if u <= r0 || u >= 2.0 * r0 {
            0.0
        } else {
            let s = (u - r0) / r0;
            t / r0 * (96.0 - (276.0 - 180.0 * s) * s) * s
        };
        f * x.signum()
    }
}

/// Radial C2 cutoff: 1 on `|x| <= r1/2`, supported in `|x| <= r1`.
pub fn cutoff_chi(r: f64, r1: f64) -> f64 {
    1.0 - ramp((r - 0.5 * r1) / (0.5 * r1))
}
