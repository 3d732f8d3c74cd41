//! Topological pressure of the flow on the trapped set, by separated-set
//! partition sums and by cover refinement, with the Bowen dimension and the
//! predicted resonance gap derived from `P(1/2)`.

use crate::dynamics::flow::{flow, flow_with_segments, mat_vec, FlowSpec, PhasePoint};
use crate::dynamics::potential::PotentialSpec;
use crate::error::{Error, Result};
use crate::trapping::{
    augment_along_flow, hyperbolic_frame, log_volume, sample_trapped_set, weak_unstable_basis,
    FrameSpec, SampleSpec, TrappedSample,
};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Separated,
    Cover,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Separated => write!(f, "separated"),
            Method::Cover => write!(f, "cover"),
        }
    }
}

/// An `(ε,t)`-separated subset of the sample: any two members are farther
/// apart than `epsilon` at some flow time in `[0, t]`.
#[derive(Debug, Clone)]
pub struct SeparatedSet {
    /// Indices into the engine's point list, in admission order.
    pub indices: Vec<usize>,
    pub epsilon: f64,
    pub t: f64,
}

/// Pressure values over a grid of `s`, with per-point uncertainties.
#[derive(Debug, Clone, Serialize)]
pub struct PressureCurve {
    pub s_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub uncertainties: Vec<f64>,
    pub method: Method,
    pub energy: f64,
    pub delta: f64,
    pub eps_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    /// Extrapolation / stability residuals per s value.
    pub residuals: Vec<f64>,
    pub notes: Vec<String>,
}

impl PressureCurve {
    /// CSV rows `s,P,uncertainty,method`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,P,uncertainty,method\n");
        for i in 0..self.s_values.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.s_values[i], self.p_values[i], self.uncertainties[i], self.method
            ));
        }
        out
    }
}

/// Controls for the pressure computation.
#[derive(Debug, Clone)]
pub struct PressureSpec {
    /// Base time unit; the fit grid is `{t0, 2 t0, .., n_t * t0}`.
    pub t0: f64,
    pub n_t: usize,
    /// Largest separation scale; the dyadic grid is `{eps0, eps0/2, eps0/4}`.
    pub eps0: f64,
    pub eps_levels: usize,
    /// Separation distances are maximized over flow times sampled this often.
    pub dt_sep: f64,
    /// Cover-element radius for the cover method.
    pub eps_cov: f64,
    /// Fraction of the sample regarded as saturation for growth fits.
    pub sat_frac: f64,
    /// Cap on engine points (subsampled deterministically above it).
    pub max_points: usize,
    pub frame: FrameSpec,
    pub flow: FlowSpec,
}

impl PressureSpec {
    pub fn defaults(lambda_est: f64) -> Self {
        let t0 = 2.0 / lambda_est;
        PressureSpec {
            t0,
            n_t: 8,
            eps0: 0.4,
            eps_levels: 3,
            dt_sep: t0 / 20.0,
            eps_cov: 0.4,
            sat_frac: 0.7,
            max_points: 2400,
            frame: FrameSpec::defaults(lambda_est),
            flow: FlowSpec::default(),
        }
    }

    /// Total flow horizon the engine needs per point.
    pub fn horizon(&self) -> f64 {
        self.t0 * self.n_t as f64
    }
}

struct EnginePoint {
    /// Phase-space positions at every knot `k * dt_sep`, `k = 0..=n_knots`.
    path: Vec<[f64; 4]>,
    /// Accumulated `lambda^+` at the same knots (`lambda[0] = 0`).
    lambda: Vec<f64>,
}

/// Precomputed per-point trajectories and unstable Jacobians over the fit
/// horizon; pressure evaluations at any `s` are cheap against it.
pub struct PressureEngine {
    dims: usize,
    pts: Vec<EnginePoint>,
    /// For each dyadic epsilon level, the first knot index at which each pair
    /// becomes separated (`u16::MAX` = never within the horizon).
    first_sep: Vec<Vec<u16>>,
    eps_grid: Vec<f64>,
    dt_sep: f64,
    n_knots: usize,
    spec: PressureSpec,
    pub dropped: usize,
    pub energy: f64,
    pub delta: f64,
}

fn phase_coords(p: &PhasePoint, dims: usize) -> [f64; 4] {
    let n = dims / 2;
    let mut c = [0.0; 4];
    for k in 0..n {
        c[k] = p.x[k];
        c[n + k] = p.xi[k];
    }
    c
}

fn dist(a: &[f64; 4], b: &[f64; 4], dims: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..dims {
        let d = a[k] - b[k];
        s += d * d;
    }
    s.sqrt()
}

impl PressureEngine {
    /// Build the engine from a trapped sample.  Points must stay trapped over
    /// the full fit horizon forward and over the frame-convergence span
    /// backward; others are dropped (counted in `dropped`).
    pub fn new(pot: &PotentialSpec, sample: &TrappedSample, spec: PressureSpec) -> Result<Self> {
        let dims = 2 * pot.dimension;
        let horizon = spec.horizon();
        let n_knots = (horizon / spec.dt_sep).round() as usize;
        let mut usable: Vec<PhasePoint> = Vec::new();
        let mut dropped = 0usize;
        for p in &sample.points {
            if p.t_forward >= horizon && p.t_backward >= spec.frame.t_converge {
                usable.push(p.point);
            } else {
                dropped += 1;
            }
        }
        if usable.is_empty() {
            return Err(Error::Numerical(
                "no trapped points survive the pressure horizon; sample with a larger t_trap".into(),
            ));
        }
        // deterministic subsample: evenly strided over the sorted sample
        if usable.len() > spec.max_points {
            let stride = usable.len() as f64 / spec.max_points as f64;
            let mut picked = Vec::with_capacity(spec.max_points);
            let mut acc = 0.0;
            while (acc as usize) < usable.len() && picked.len() < spec.max_points {
                picked.push(usable[acc as usize]);
                acc += stride;
            }
            usable = picked;
        }

        let knots: Vec<f64> = (1..=n_knots).map(|k| k as f64 * spec.dt_sep).collect();
        let mut pts = Vec::with_capacity(usable.len());
        for &point in &usable {
            let frame = hyperbolic_frame(pot, point, &spec.frame)?;
            if !frame.converged {
                dropped += 1;
                continue;
            }
            let segments = flow_with_segments(pot, point, &knots, spec.flow)?;
            let mut path = Vec::with_capacity(n_knots + 1);
            let mut lambda = Vec::with_capacity(n_knots + 1);
            path.push(phase_coords(&point, dims));
            lambda.push(0.0);
            let mut basis = weak_unstable_basis(&frame, dims);
            let mut acc = 0.0;
            for (p, j) in &segments {
                for v in basis.iter_mut() {
                    *v = mat_vec(j, v, dims);
                }
                acc += log_volume(&mut basis, dims);
                path.push(phase_coords(p, dims));
                lambda.push(acc);
            }
            pts.push(EnginePoint { path, lambda });
        }
        if pts.is_empty() {
            return Err(Error::Numerical("all candidate points failed frame convergence".into()));
        }

        let eps_grid: Vec<f64> = (0..spec.eps_levels).map(|k| spec.eps0 / (1 << k) as f64).collect();
        // pairwise first-separation knot per epsilon level
        let n = pts.len();
        let mut first_sep: Vec<Vec<u16>> = vec![vec![u16::MAX; n * n]; eps_grid.len()];
        for i in 0..n {
            for j in (i + 1)..n {
                let mut running = 0.0f64;
                let mut found = vec![false; eps_grid.len()];
                let mut remaining = eps_grid.len();
                for k in 0..=n_knots {
                    let d = dist(&pts[i].path[k], &pts[j].path[k], dims);
                    if d > running {
                        running = d;
                        for (lvl, &eps) in eps_grid.iter().enumerate() {
                            if !found[lvl] && running > eps {
                                found[lvl] = true;
                                remaining -= 1;
                                first_sep[lvl][i * n + j] = k as u16;
                                first_sep[lvl][j * n + i] = k as u16;
                            }
                        }
                        if remaining == 0 {
                            break;
                        }
                    }
                }
            }
        }

        Ok(PressureEngine {
            dims,
            pts,
            first_sep,
            eps_grid,
            dt_sep: spec.dt_sep,
            n_knots,
            spec,
            dropped,
            energy: sample.energy,
            delta: sample.delta,
        })
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    fn eps_level(&self, eps: f64) -> Result<usize> {
        self.eps_grid
            .iter()
            .position(|&e| (e - eps).abs() < 1e-12 * (1.0 + eps))
            .ok_or_else(|| Error::Config(format!("epsilon {eps} not on the engine's dyadic grid")))
    }

    fn knot_of(&self, t: f64) -> Result<usize> {
        let k = (t / self.dt_sep).round() as usize;
        if k > self.n_knots || (t - k as f64 * self.dt_sep).abs() > 1e-9 * (1.0 + t) {
            return Err(Error::Config(format!("time {t} not on the engine's knot lattice")));
        }
        Ok(k)
    }

    /// Greedy maximal `(ε,t)`-separated subset, admitting points in the
    /// deterministic engine order.
    pub fn separated_set(&self, eps: f64, t: f64) -> Result<SeparatedSet> {
        let lvl = self.eps_level(eps)?;
        let kmax = self.knot_of(t)? as u16;
        let n = self.pts.len();
        let mut admitted: Vec<usize> = Vec::new();
        for i in 0..n {
            let ok = admitted.iter().all(|&j| self.first_sep[lvl][i * n + j] <= kmax);
            if ok {
                admitted.push(i);
            }
        }
        Ok(SeparatedSet { indices: admitted, epsilon: eps, t })
    }

    /// Partition sum `Z_t(ε,s) = Σ exp(−s λ⁺_t)` over the set's members.
    pub fn partition_sum(&self, set: &SeparatedSet, s: f64) -> Result<f64> {
        let k = self.knot_of(set.t)?;
        Ok(set.indices.iter().map(|&i| (-s * self.pts[i].lambda[k]).exp()).sum())
    }

    fn t_grid(&self) -> Vec<f64> {
        (1..=self.spec.n_t).map(|k| k as f64 * self.spec.t0).collect()
    }

    /// Log of the unseen-class correction.  A finite sample of `N` points
    /// reports only the orbit classes it happens to occupy, so raw class
    /// counts bend below the true growth as occupancy rises; inverting the
    /// occupancy law `S = N(1 − e^{−M/N})` de-biases counts and partition
    /// sums alike.  Exact no-op for singletons, monotone in the count.
    fn occupancy_logfactor(&self, found: usize) -> f64 {
        let n = self.pts.len() as f64;
        let s = found as f64;
        if found < 2 || s >= 0.999 * n {
            return 0.0;
        }
        let corrected = -n * (1.0 - s / n).ln();
        (corrected / s).ln()
    }

    /// Separated-set pressure at one `s`: per-epsilon `1/t` intercept fits,
    /// then two-level Richardson extrapolation in epsilon.  The extrapolation
    /// assumes the levels resolve the same times; when finer levels lost more
    /// knots to saturation, it would amplify the finite-sample artifact
    /// instead, so the coarsest level is reported with the cross-level spread
    /// folded into the uncertainty.
    pub fn pressure_separated(&self, s: f64) -> Result<(f64, f64, Vec<String>)> {
        let t_grid = self.t_grid();
        let n_total = self.pts.len();
        let mut per_eps: Vec<(f64, f64)> = Vec::new(); // (intercept, fit residual)
        let mut knots_used: Vec<usize> = Vec::new();
        let mut notes = Vec::new();
        for &eps in &self.eps_grid {
            let mut us = Vec::new();
            let mut ys = Vec::new();
            let mut saturated = 0usize;
            for &t in &t_grid {
                let set = self.separated_set(eps, t)?;
                if n_total > 1 && set.indices.len() as f64 > self.spec.sat_frac * n_total as f64 {
                    saturated += 1;
                    continue;
                }
                let z = self.partition_sum(&set, s)?;
                us.push(1.0 / t);
                ys.push((z.ln() + self.occupancy_logfactor(set.indices.len())) / t);
            }
            if us.len() < 3 {
                // fall back to the full grid, flag the saturation
                us.clear();
                ys.clear();
                for &t in &t_grid {
                    let set = self.separated_set(eps, t)?;
                    let z = self.partition_sum(&set, s)?;
                    us.push(1.0 / t);
                    ys.push((z.ln() + self.occupancy_logfactor(set.indices.len())) / t);
                }
                notes.push(format!(
                    "eps {eps:.3}: fewer than 3 unsaturated times (sample too sparse); fit uses all times"
                ));
                let (p, r) = fit_intercept(&us, &ys);
                let spread = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    - ys.iter().cloned().fold(f64::INFINITY, f64::min);
                per_eps.push((p, r + 0.5 * spread));
                knots_used.push(0);
                continue;
            }
            if saturated > 0 {
                notes.push(format!("eps {eps:.3}: {saturated} saturated times excluded from the fit"));
            }
            per_eps.push(fit_intercept(&us, &ys));
            knots_used.push(us.len());
        }
        let balanced = knots_used.iter().all(|&k| k == knots_used[0] && k > 0);
        let (p, lvl_resid) = if balanced {
            richardson(&per_eps)
        } else {
            notes.push(
                "epsilon levels saturate unevenly; coarsest level reported without extrapolation"
                    .into(),
            );
            let spread = per_eps.iter().map(|&(p, _)| p).fold(f64::NEG_INFINITY, f64::max)
                - per_eps.iter().map(|&(p, _)| p).fold(f64::INFINITY, f64::min);
            (per_eps[0].0, 0.5 * spread)
        };
        let fit_resid = per_eps.iter().map(|&(_, r)| r).fold(0.0, f64::max);
        let uncertainty = (lvl_resid + fit_resid).max(1e-3);
        Ok((p, uncertainty, notes))
    }

    /// Cover-refinement pressure at one `s`: greedy ball cover of the sample,
    /// itinerary classes over `T` steps of length `t0`, coarse-grained
    /// Jacobian weights, stability measured against `T/2`.
    pub fn pressure_cover(&self, s: f64) -> Result<(f64, f64, Vec<String>)> {
        let n = self.pts.len();
        let mut notes = Vec::new();
        // greedy cover: first uncovered point becomes a new element center
        let mut centers: Vec<usize> = Vec::new();
        for i in 0..n {
            let covered = centers
                .iter()
                .any(|&c| dist(&self.pts[i].path[0], &self.pts[c].path[0], self.dims) <= self.spec.eps_cov);
            if !covered {
                centers.push(i);
            }
        }
        // element index of an arbitrary phase point: nearest center
        let element_of = |coords: &[f64; 4]| -> (usize, f64) {
            let mut best = (0usize, f64::INFINITY);
            for (e, &c) in centers.iter().enumerate() {
                let d = dist(coords, &self.pts[c].path[0], self.dims);
                if d < best.1 {
                    best = (e, d);
                }
            }
            best
        };
        let step_knots = self.knot_of(self.spec.t0)?;
        let t_max_steps = self.spec.n_t;
        // itineraries per point, one symbol per t0-step
        let mut uncovered = 0usize;
        let mut itineraries: Vec<Vec<u16>> = Vec::with_capacity(n);
        for p in &self.pts {
            let mut it = Vec::with_capacity(t_max_steps);
            for step in 0..t_max_steps {
                let k = step * step_knots;
                let (e, d) = element_of(&p.path[k]);
                if d > self.spec.eps_cov {
                    uncovered += 1;
                }
                it.push(e as u16);
            }
            itineraries.push(it);
        }
        if uncovered > 0 {
            notes.push(format!(
                "{uncovered} orbit symbols fell outside every cover element (assigned to nearest)"
            ));
        }
        // pick the largest unsaturated depth, then compare with half depth
        let classes_at = |depth: usize| -> Vec<(f64, usize)> {
            // map itinerary prefix -> min lambda at depth*t0
            let kt = depth * step_knots;
            let mut sorted: Vec<usize> = (0..n).collect();
            sorted.sort_by(|&a, &b| itineraries[a][..depth].cmp(&itineraries[b][..depth]));
            let mut out: Vec<(f64, usize)> = Vec::new();
            let mut idx = 0;
            while idx < n {
                let mut end = idx + 1;
                while end < n && itineraries[sorted[end]][..depth] == itineraries[sorted[idx]][..depth] {
                    end += 1;
                }
                let min_lambda = sorted[idx..end]
                    .iter()
                    .map(|&i| self.pts[i].lambda[kt])
                    .fold(f64::INFINITY, f64::min);
                out.push((min_lambda, end - idx));
                idx = end;
            }
            out
        };
        let mut depth = t_max_steps;
        if n > 1 {
            while depth > 2 {
                let count = classes_at(depth).len();
                if (count as f64) <= self.spec.sat_frac * n as f64 {
                    break;
                }
                depth -= 1;
            }
            if depth == 2 {
                notes.push("cover classes saturate even at depth 2; sample too sparse for the cover method".into());
            }
        }
        let p_at = |depth: usize| -> f64 {
            let t_total = depth as f64 * self.spec.t0;
            let classes = classes_at(depth);
            let z: f64 = classes.iter().map(|&(ml, _)| (-s * ml).exp()).sum();
            (z.ln() + self.occupancy_logfactor(classes.len())) / t_total
        };
        let p_full = p_at(depth);
        let p_half = p_at((depth / 2).max(1));
        let uncertainty = ((p_full - p_half).abs() + 1e-3).max(1e-3);
        Ok((p_full, uncertainty, notes))
    }

    /// Evaluate a full curve over `s_values` with one method.
    pub fn curve(&self, s_values: &[f64], method: Method) -> Result<PressureCurve> {
        let mut p_values = Vec::with_capacity(s_values.len());
        let mut uncertainties = Vec::with_capacity(s_values.len());
        let mut residuals = Vec::with_capacity(s_values.len());
        let mut notes: Vec<String> = Vec::new();
        for &s in s_values {
            let (p, u, mut nn) = match method {
                Method::Separated => self.pressure_separated(s)?,
                Method::Cover => self.pressure_cover(s)?,
            };
            p_values.push(p);
            uncertainties.push(u);
            residuals.push(u);
            for note in nn.drain(..) {
                if !notes.contains(&note) {
                    notes.push(note);
                }
            }
        }
        Ok(PressureCurve {
            s_values: s_values.to_vec(),
            p_values,
            uncertainties,
            method,
            energy: self.energy,
            delta: self.delta,
            eps_grid: self.eps_grid.clone(),
            t_grid: self.t_grid(),
            residuals,
            notes,
        })
    }
}

/// Least-squares intercept of `y` against `u = 1/t` (the `t -> inf` limit),
/// with the rms misfit as residual.
fn fit_intercept(us: &[f64], ys: &[f64]) -> (f64, f64) {
    let m = us.len() as f64;
    if us.len() == 1 {
        return (ys[0], 0.0);
    }
    let su: f64 = us.iter().sum();
    let sy: f64 = ys.iter().sum();
    let suu: f64 = us.iter().map(|u| u * u).sum();
    let suy: f64 = us.iter().zip(ys).map(|(u, y)| u * y).sum();
    let det = m * suu - su * su;
    if det.abs() < 1e-300 {
        return (sy / m, 0.0);
    }
    let slope = (m * suy - su * sy) / det;
    let intercept = (sy - slope * su) / m;
    let resid = (us
        .iter()
        .zip(ys)
        .map(|(u, y)| {
            let e = y - (intercept + slope * u);
            e * e
        })
        .sum::<f64>()
        / m)
        .sqrt();
    (intercept, resid)
}

/// Two-level Richardson extrapolation on a dyadic epsilon grid assuming a
/// first-order error term; residual is the level-to-level change.
fn richardson(per_eps: &[(f64, f64)]) -> (f64, f64) {
    match per_eps.len() {
        0 => (f64::NAN, f64::INFINITY),
        1 => (per_eps[0].0, per_eps[0].1.max(1e-3)),
        2 => {
            let r = 2.0 * per_eps[1].0 - per_eps[0].0;
            (r, (r - per_eps[1].0).abs())
        }
        _ => {
            let k = per_eps.len();
            let r1 = 2.0 * per_eps[k - 2].0 - per_eps[k - 3].0;
            let r2 = 2.0 * per_eps[k - 1].0 - per_eps[k - 2].0;
            (r2, (r2 - r1).abs())
        }
    }
}

/// Separated-set pressure curve, building a throwaway engine.
pub fn pressure_separated(
    pot: &PotentialSpec,
    sample: &TrappedSample,
    s_values: &[f64],
    spec: &PressureSpec,
) -> Result<PressureCurve> {
    PressureEngine::new(pot, sample, spec.clone())?.curve(s_values, Method::Separated)
}

/// Cover-refinement pressure curve, building a throwaway engine.
pub fn pressure_cover(
    pot: &PotentialSpec,
    sample: &TrappedSample,
    s_values: &[f64],
    spec: &PressureSpec,
) -> Result<PressureCurve> {
    PressureEngine::new(pot, sample, spec.clone())?.curve(s_values, Method::Cover)
}

/// Sample the trapped set and densify it along the flow with shifts matched
/// to the engine horizon: partition functions need many more points than
/// distinguishable orbit classes, and flow images are free extra samples.
pub fn dense_trapped_sample(
    pot: &PotentialSpec,
    sample_spec: &SampleSpec,
    spec: &PressureSpec,
) -> Result<TrappedSample> {
    let sample = sample_trapped_set(pot, sample_spec)?;
    if sample.meta.empty {
        return Ok(sample);
    }
    let step = spec.t0 / 3.0;
    let knots: Vec<f64> = (1..=6).flat_map(|k| [k as f64 * step, -(k as f64) * step]).collect();
    augment_along_flow(pot, &sample, &knots, spec.flow)
}

/// Bowen dimension result with the bisection bracket and the section
/// box-count cross-check.
#[derive(Debug, Clone, Serialize)]
pub struct DimensionResult {
    pub d_h: f64,
    pub bracket: (f64, f64),
    /// Full trapped-set dimension `2 d_H + 1` (planar systems).
    pub dim_k: f64,
    /// Box-counting estimate of the Poincare-section trace dimension, and
    /// the per-transversal value (half of it).
    pub box_section: Option<f64>,
    pub box_transversal: Option<f64>,
    pub uncertainty_at_root: f64,
}

/// Root of `s -> P(s)` by bisection to a bracket of width 1e-2, with a
/// box-counting cross-check averaged over the section slabs in `slabs`
/// (one per-slab estimate each from trajectories crossing `x1 = slab`).
pub fn dimension(
    pot: &PotentialSpec,
    sample: &TrappedSample,
    spec: &PressureSpec,
    slabs: &[f64],
) -> Result<DimensionResult> {
    if pot.dimension != 2 {
        return Err(Error::Config("dimension is defined for planar systems only".into()));
    }
    let engine = PressureEngine::new(pot, sample, spec.clone())?;
    let eval = |s: f64| -> Result<(f64, f64)> {
        let (p, u, _) = engine.pressure_separated(s)?;
        Ok((p, u))
    };
    let (p0, u0) = eval(0.0)?;
    if p0 < -u0 {
        return Err(Error::Numerical(format!("pressure already negative at s=0 (P={p0:.3})")));
    }
    if p0.abs() <= u0.max(1e-6) && p0 <= 0.0 {
        // singleton-like trapped set: the root sits at 0
        return Ok(DimensionResult {
            d_h: 0.0,
            bracket: (0.0, 1e-2),
            dim_k: 1.0,
            box_section: None,
            box_transversal: None,
            uncertainty_at_root: u0,
        });
    }
    let mut lo = 0.0;
    let mut hi = f64::NAN;
    for k in 1..=12 {
        let s = 0.25 * k as f64;
        let (p, _) = eval(s)?;
        if p < 0.0 {
            hi = s;
            break;
        }
        lo = s;
    }
    if hi.is_nan() {
        return Err(Error::Numerical("pressure has no sign change on [0, 3]; no dimension root".into()));
    }
    let mut u_root = u0;
    while hi - lo > 1e-2 {
        let mid = 0.5 * (lo + hi);
        let (p, u) = eval(mid)?;
        u_root = u;
        if p > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let d_h = 0.5 * (lo + hi);
    let mut slab_dims = Vec::new();
    for &slab in slabs {
        let trace = section_trace(pot, sample, spec, slab)?;
        if trace.len() >= 64 {
            let d = box_count_dimension(&trace);
            if d.is_finite() {
                slab_dims.push(d);
            }
        }
    }
    let (box_section, box_transversal) = if slab_dims.is_empty() {
        (None, None)
    } else {
        let d = slab_dims.iter().sum::<f64>() / slab_dims.len() as f64;
        (Some(d), Some(0.5 * d))
    };
    Ok(DimensionResult {
        d_h,
        bracket: (lo, hi),
        dim_k: 2.0 * d_h + 1.0,
        box_section,
        box_transversal,
        uncertainty_at_root: u_root,
    })
}

/// Crossings of the slab `x1 = slab` by the engine trajectories, recorded as
/// `(x2, xi2)` section coordinates (linear interpolation between knots).
///
/// Crossings are only collected over `[0, 3 t0]` and only from points with
/// generous trapping margins on both sides: a crossing at time `t` sits
/// within `~exp(-lambda * min(t_fwd - t, t_bwd + t))` of the trapped set, so
/// late crossings of barely-trapped orbits would fatten the trace and bias
/// the box count up.
pub fn section_trace(pot: &PotentialSpec, sample: &TrappedSample, spec: &PressureSpec, slab: f64) -> Result<Vec<(f64, f64)>> {
    if pot.dimension != 2 {
        return Err(Error::Config("section traces require a planar system".into()));
    }
    let horizon = spec.horizon();
    let n_knots = (3.0 * spec.t0 / spec.dt_sep).round() as usize;
    let knots: Vec<f64> = (1..=n_knots).map(|k| k as f64 * spec.dt_sep).collect();
    let mut out = Vec::new();
    for p in &sample.points {
        if p.t_forward < horizon || p.t_backward < 5.0 * spec.t0 {
            continue;
        }
        let segs = flow_with_segments(pot, p.point, &knots, spec.flow)?;
        let mut prev = p.point;
        for (q, _) in segs {
            let (a, b) = (prev.x[0] - slab, q.x[0] - slab);
            if a.signum() != b.signum() && a != 0.0 {
                // bisect the crossing time: linear interpolation bends by the
                // local curvature, which is visible at box-count scales when
                // the slab cuts through a bump
                let (mut lo, mut hi) = (0.0, spec.dt_sep);
                let mut cross = q;
                for _ in 0..48 {
                    let mid = 0.5 * (lo + hi);
                    let m = flow(pot, prev, mid, spec.flow)?;
                    if (m.x[0] - slab).signum() == a.signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                        cross = m;
                    }
                }
                out.push((cross.x[1], cross.xi[1]));
            }
            prev = q;
        }
    }
    Ok(out)
}

/// Box-counting dimension of a planar point cloud: occupied-box counts over a
/// dyadic scale ladder, least-squares slope of `log N` against `log 1/δ`
/// over the scales with meaningful counts.  Only the finest qualifying
/// scales enter the fit: coarse levels see the arrangement of branch
/// clusters rather than the local scaling and would bias the slope up.
pub fn box_count_dimension(points: &[(f64, f64)]) -> f64 {
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    let span = (xmax - xmin).max(ymax - ymin).max(1e-12);
    let mut logs = Vec::new();
    let mut counts = Vec::new();
    for level in 1..=12u32 {
        let delta = span / (1 << level) as f64;
        let mut boxes: Vec<(i64, i64)> = points
            .iter()
            .map(|&(x, y)| (((x - xmin) / delta).floor() as i64, ((y - ymin) / delta).floor() as i64))
            .collect();
        boxes.sort_unstable();
        boxes.dedup();
        let n = boxes.len();
        if n >= 4 && n * 3 <= points.len() {
            logs.push((1.0 / delta).ln());
            counts.push((n as f64).ln());
        }
    }
    if logs.len() < 2 {
        return f64::NAN;
    }
    if logs.len() > 4 {
        logs.drain(..logs.len() - 4);
        counts.drain(..counts.len() - 4);
    }
    let m = logs.len() as f64;
    let sx: f64 = logs.iter().sum();
    let sy: f64 = counts.iter().sum();
    let sxx: f64 = logs.iter().map(|x| x * x).sum();
    let sxy: f64 = logs.iter().zip(&counts).map(|(x, y)| x * y).sum();
    (m * sxy - sx * sy) / (m * sxx - sx * sx)
}

/// Gap prediction from the pressure at `1/2` across the energy window.
#[derive(Debug, Clone, Serialize)]
pub struct GapPrediction {
    /// Predicted gap rate, absent when no energy in the window has
    /// `P(1/2) < 0` with nonempty trapping.
    pub gamma: Option<f64>,
    pub interval: Option<(f64, f64)>,
    /// Per-energy `(E', P(1/2), uncertainty)`; empty-trapping energies are
    /// listed with NaN pressure.
    pub per_energy: Vec<(f64, f64, f64)>,
}

/// Predicted resonance gap `γ = min over E' in {E−δ, E, E+δ} of −P_{E'}(1/2)`
/// over energies with nonempty trapping; positive values predict a gap.
pub fn predicted_gap(
    pot: &PotentialSpec,
    sample_spec: &SampleSpec,
    spec: &PressureSpec,
) -> Result<GapPrediction> {
    let energies = [
        sample_spec.energy - sample_spec.delta,
        sample_spec.energy,
        sample_spec.energy + sample_spec.delta,
    ];
    let mut per_energy = Vec::new();
    let mut best: Option<(f64, f64)> = None; // (gamma, uncertainty)
    for &e in &energies {
        let mut ss = sample_spec.clone();
        ss.energy = e;
        let sample = dense_trapped_sample(pot, &ss, spec)?;
        if sample.meta.empty {
            per_energy.push((e, f64::NAN, f64::NAN));
            continue;
        }
        let engine = PressureEngine::new(pot, &sample, spec.clone())?;
        let (p_half, u, _) = engine.pressure_separated(0.5)?;
        per_energy.push((e, p_half, u));
        let gamma = -p_half;
        match best {
            None => best = Some((gamma, u)),
            Some((g, _)) if gamma < g => best = Some((gamma, u)),
            _ => {}
        }
    }
    match best {
        Some((gamma, u)) if gamma > 0.0 => Ok(GapPrediction {
            gamma: Some(gamma),
            interval: Some((gamma - u, gamma + u)),
            per_energy,
        }),
        _ => Ok(GapPrediction { gamma: None, interval: None, per_energy }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eckart_engine() -> (PotentialSpec, PressureEngine) {
        let pot = PotentialSpec::standard_eckart();
        let mut ss = SampleSpec::defaults(&pot, 1.0, 0.01);
        ss.seeds_angle = 16;
        let mut ps = PressureSpec::defaults(2.0);
        ps.eps0 = 0.1;
        let sample = sample_trapped_set(&pot, &ss).expect("sampling failed");
        let engine = PressureEngine::new(&pot, &sample, ps).expect("engine failed");
        (pot, engine)
    }

    #[test]
    fn test_separated_set_singleton_is_itself() {
        let (_, engine) = eckart_engine();
        let set = engine.separated_set(0.1, engine.spec.t0).expect("set failed");
        assert_eq!(set.indices.len(), engine.len(), "singleton-like sample should be kept whole");
        assert!(engine.len() >= 1);
    }

    #[test]
    fn test_partition_sum_at_zero_counts_members() {
        let (_, engine) = eckart_engine();
        let set = engine.separated_set(0.1, engine.spec.t0).unwrap();
        let z = engine.partition_sum(&set, 0.0).unwrap();
        assert!((z - set.indices.len() as f64).abs() < 1e-12, "Z(0) = |S| violated: {}", z);
        // Z decreasing in s
        let z1 = engine.partition_sum(&set, 0.5).unwrap();
        let z2 = engine.partition_sum(&set, 1.0).unwrap();
        assert!(z > z1 && z1 > z2, "partition sum not decreasing in s");
    }

    #[test]
    fn test_eckart_pressure_is_minus_two_s() {
        // the barrier top is the whole trapped set: lambda_t = 2t forces
        // P(s) = -2s for both methods
        let (_, engine) = eckart_engine();
        for &s in &[0.0, 0.25, 0.5, 1.0] {
            let (p_sep, u_sep, _) = engine.pressure_separated(s).expect("separated failed");
            assert!(
                (p_sep + 2.0 * s).abs() < 1e-6 + u_sep,
                "separated P({s}) = {p_sep}, expected {}",
                -2.0 * s
            );
            assert!((p_sep + 2.0 * s).abs() < 1e-4, "separated P({s}) = {p_sep} too far off");
            let (p_cov, _, _) = engine.pressure_cover(s).expect("cover failed");
            assert!((p_cov + 2.0 * s).abs() < 1e-4, "cover P({s}) = {p_cov}, expected {}", -2.0 * s);
        }
    }

    #[test]
    fn test_pressure_curve_monotone_convex_and_csv() {
        let (_, engine) = eckart_engine();
        let s: Vec<f64> = vec![0.0, 0.25, 0.5, 0.75, 1.0];
        let curve = engine.curve(&s, Method::Separated).expect("curve failed");
        for w in curve.p_values.windows(2) {
            assert!(w[1] <= w[0] + 0.05, "pressure not nonincreasing: {:?}", curve.p_values);
        }
        for w in curve.p_values.windows(3) {
            assert!(w[0] - 2.0 * w[1] + w[2] >= -0.05, "pressure not convex: {:?}", curve.p_values);
        }
        let csv = curve.to_csv();
        assert!(csv.starts_with("s,P,uncertainty,method\n"));
        assert!(csv.lines().count() == 6, "csv row count");
        assert!(csv.contains("separated"));
    }

    #[test]
    fn test_predicted_gap_eckart_is_one() {
        let pot = PotentialSpec::standard_eckart();
        let mut ss = SampleSpec::defaults(&pot, 1.0, 0.01);
        ss.seeds_angle = 16;
        let mut ps = PressureSpec::defaults(2.0);
        ps.eps0 = 0.1;
        let gap = predicted_gap(&pot, &ss, &ps).expect("gap prediction failed");
        let g = gap.gamma.expect("eckart should predict a gap");
        assert!((g - 1.0).abs() < 1e-3, "eckart gap should be 1, got {}", g);
        // side energies carry no trapping
        assert!(gap.per_energy[0].1.is_nan() && gap.per_energy[2].1.is_nan());
    }

    #[test]
    fn test_box_count_dimension_on_cantor_cloud() {
        // middle-thirds Cantor set at depth 9 crossed with a few offsets:
        // expected dimension log 2 / log 3
        let mut xs = vec![0.0f64];
        for level in 0..9 {
            let shift = 2.0 / 3f64.powi(level + 1);
            let mut next = Vec::with_capacity(xs.len() * 2);
            for &x in &xs {
                next.push(x);
                next.push(x + shift);
            }
            xs = next;
        }
        let pts: Vec<(f64, f64)> = xs.iter().map(|&x| (x, 0.0)).collect();
        let d = box_count_dimension(&pts);
        let expected = 2f64.ln() / 3f64.ln();
        assert!((d - expected).abs() < 0.05, "cantor box dimension {} vs {}", d, expected);
    }

    #[test]
    fn test_fit_intercept_recovers_line() {
        let us = [1.0, 0.5, 0.25, 0.125];
        let ys: Vec<f64> = us.iter().map(|u| -1.0 + 3.0 * u).collect();
        let (p, r) = fit_intercept(&us, &ys);
        assert!((p + 1.0).abs() < 1e-12 && r < 1e-12, "intercept {} residual {}", p, r);
    }
}
