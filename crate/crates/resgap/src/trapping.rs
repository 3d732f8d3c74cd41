//! Trapped-set machinery: certified escape times, bisection sampling of the
//! trapped set on an energy shell, hyperbolic frames `E^+ / E^-`, and the
//! finite-time unstable Jacobian `lambda^+_t`.

use crate::dynamics::flow::{
    dot, flow, flow_with_segments, mat_vec, norm, FlowSpec, PhasePoint, SmallMat, Stepper, Tangent,
};
use crate::dynamics::potential::PotentialSpec;
use crate::error::{Error, Result};
use serde::Serialize;

/// Controls for escape classification.
#[derive(Debug, Clone, Copy)]
pub struct EscapeSpec {
    /// Radius beyond which the convexity certificate applies (default `3 R0`).
    pub escape_radius: f64,
    /// Censoring horizon: a trajectory still inside by this time counts as
    /// trapped for classification purposes.
    pub t_max: f64,
    /// Minimal total energy for the certificate; below it, outward motion
    /// past the escape radius cannot be certified as permanent.
    pub eps_kin: f64,
    pub flow: FlowSpec,
}

impl EscapeSpec {
    pub fn for_potential(pot: &PotentialSpec, lambda_est: f64) -> Self {
        let r0 = pot.effective_radius();
        EscapeSpec {
            escape_radius: 3.0 * r0,
            t_max: 40.0 / lambda_est + 3.0 * r0,
            eps_kin: 1e-6,
            flow: FlowSpec::default(),
        }
    }
}

/// Outcome of one directional escape computation.
#[derive(Debug, Clone, Copy)]
pub struct EscapeOutcome {
    /// First certified escape time; `f64::INFINITY` when censored at `t_max`.
    pub time: f64,
    /// Phase point at the escape event (absent when censored).
    pub exit: Option<PhasePoint>,
}

impl EscapeOutcome {
    pub fn escaped(&self) -> bool {
        self.time.is_finite()
    }

    /// Discrete itinerary label: exit direction bucketed into sectors
    /// (sign of `x` in 1d); `None` when censored.
    pub fn label(&self, n: usize, sectors: usize) -> Option<u32> {
        self.exit.map(|p| {
            if n == 1 {
                if p.x[0] >= 0.0 {
                    0
                } else {
                    1
                }
            } else {
                let ang = p.x[1].atan2(p.x[0]).rem_euclid(2.0 * std::f64::consts::PI);
                ((ang / (2.0 * std::f64::consts::PI) * sectors as f64) as u32).min(sectors as u32 - 1)
            }
        })
    }
}

/// Escape times in both directions for one phase point.
#[derive(Debug, Clone, Copy)]
pub struct EscapeRecord {
    pub forward: EscapeOutcome,
    pub backward: EscapeOutcome,
}

fn reverse_momentum(p: PhasePoint) -> PhasePoint {
    PhasePoint { x: p.x, xi: [-p.xi[0], -p.xi[1]] }
}

/// First time the trajectory is certifiably gone: `|x| > escape_radius`,
/// moving outward (`<x, xi> > 0`), with conserved energy at least `eps_kin`.
/// Strict convexity of `t -> |x(t)|^2` outside the interaction region makes
/// the event permanent, so integration can stop there.
pub fn escape_time(pot: &PotentialSpec, start: PhasePoint, spec: &EscapeSpec) -> Result<EscapeOutcome> {
    let n = pot.dimension;
    let energy = start.energy(pot);
    if energy < spec.eps_kin {
        return Err(Error::CertificateInapplicable(format!(
            "energy {energy:.3e} below eps_kin {:.3e}; escape cannot be certified",
            spec.eps_kin
        )));
    }
    let r2 = spec.escape_radius * spec.escape_radius;
    let gone = |p: &PhasePoint| -> bool {
        let xx: f64 = p.x[..n].iter().map(|v| v * v).sum();
        let outward: f64 = p.x[..n].iter().zip(&p.xi[..n]).map(|(a, b)| a * b).sum();
        xx > r2 && outward > 0.0
    };
    if gone(&start) {
        return Ok(EscapeOutcome { time: 0.0, exit: Some(start) });
    }
    let mut st = Stepper::new(pot, start, spec.flow, false);
    loop {
        let t_prev = st.t();
        let p_prev = st.point();
        st.step_toward(spec.t_max)?;
        if gone(&st.point()) {
            // localize the crossing by bisection on the step interval
            let (mut lo, mut hi) = (0.0f64, st.t() - t_prev);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let pm = flow(pot, p_prev, mid, spec.flow)?;
                if gone(&pm) {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo < 1e-12 * (1.0 + t_prev) {
                    break;
                }
            }
            let t_exit = t_prev + hi;
            let exit = flow(pot, p_prev, hi, spec.flow)?;
            return Ok(EscapeOutcome { time: t_exit, exit: Some(exit) });
        }
        if st.t() >= spec.t_max {
            return Ok(EscapeOutcome { time: f64::INFINITY, exit: None });
        }
    }
}

/// Escape times forward and backward in time.
pub fn escape_record(pot: &PotentialSpec, p: PhasePoint, spec: &EscapeSpec) -> Result<EscapeRecord> {
    let forward = escape_time(pot, p, spec)?;
    let backward = escape_time(pot, reverse_momentum(p), spec)?;
    Ok(EscapeRecord { forward, backward })
}

/// Crude expansion-rate estimate; it only sets time scales, so a factor-two
/// error is harmless.  Single-barrier systems use the top curvature (exact at
/// the fixed point); multi-bump scattering systems use the bounce picture:
/// expansion `~2d/a` per flight of length `d` at speed `2*sqrt(E)`.
pub fn estimate_exponent(pot: &PotentialSpec, energy: f64) -> f64 {
    let n = pot.dimension;
    let mut d_min = f64::INFINITY;
    for i in 0..pot.bumps.len() {
        for j in (i + 1)..pot.bumps.len() {
            let d: f64 = (0..n)
                .map(|k| (pot.bumps[i].center[k] - pot.bumps[j].center[k]).powi(2))
                .sum::<f64>()
                .sqrt();
            d_min = d_min.min(d);
        }
    }
    if d_min.is_finite() && d_min > 0.0 && energy > 0.0 {
        // scattering between bumps: effective radius at the energy level
        let a_max = pot
            .bumps
            .iter()
            .map(|b| {
                let frac = (energy / b.amplitude.abs()).clamp(0.05, 0.95);
                b.width * (1.0 / frac).ln().sqrt()
            })
            .fold(0.0, f64::max);
        let expansion = (2.0 * d_min / a_max).max(1.5);
        let t_flight = d_min / (2.0 * energy.sqrt());
        return (expansion.ln() / t_flight).clamp(0.2, 20.0);
    }
    // single barrier: strongest unstable curvature along the potential tops
    let mut strongest: f64 = 0.0;
    let mut hess = [[0.0; 2]; 2];
    for b in &pot.bumps {
        pot.hess(&b.center, &mut hess);
        let min_eig = if n == 1 {
            hess[0][0]
        } else {
            let tr = hess[0][0] + hess[1][1];
            let det = hess[0][0] * hess[1][1] - hess[0][1] * hess[1][0];
            0.5 * (tr - (tr * tr - 4.0 * det).max(0.0).sqrt())
        };
        if min_eig < 0.0 {
            strongest = strongest.max(-min_eig);
        }
    }
    (2.0 * strongest).sqrt().clamp(0.2, 20.0)
}

/// One sampled trapped phase point with its certified escape times.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrappedPoint {
    #[serde(skip)]
    pub point: PhasePoint,
    pub t_forward: f64,
    pub t_backward: f64,
    pub energy: f64,
}

/// Sampling diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct SampleMeta {
    pub seeds: usize,
    pub refined_pairs: usize,
    pub kept: usize,
    pub escape_radius: f64,
    pub t_trap: f64,
    pub lambda_est: f64,
    pub slab_x1: f64,
    /// True when no trapping was detected on this shell.
    pub empty: bool,
}

/// Sample of the trapped set within the energy window `[E-delta, E+delta]`.
#[derive(Debug, Clone)]
pub struct TrappedSample {
    pub energy: f64,
    pub delta: f64,
    pub points: Vec<TrappedPoint>,
    pub meta: SampleMeta,
}

impl TrappedSample {
    /// CSV rows `x1,..,xn,xi1,..,xin,t_fwd,t_bwd,energy`.
    pub fn to_csv(&self, n: usize) -> String {
        let mut out = String::new();
        if n == 1 {
            out.push_str("x1,xi1,t_fwd,t_bwd,energy\n");
        } else {
            out.push_str("x1,x2,xi1,xi2,t_fwd,t_bwd,energy\n");
        }
        for p in &self.points {
            for k in 0..n {
                out.push_str(&format!("{},", p.point.x[k]));
            }
            for k in 0..n {
                out.push_str(&format!("{},", p.point.xi[k]));
            }
            out.push_str(&format!("{},{},{}\n", p.t_forward, p.t_backward, p.energy));
        }
        out
    }
}

/// Controls for the trapped-set sampler.
#[derive(Debug, Clone)]
pub struct SampleSpec {
    pub energy: f64,
    pub delta: f64,
    /// Poincare-style slab `x1 = slab_x1` where seeds are planted.
    pub slab_x1: f64,
    /// Seed counts: positions along the slab (2d) and momentum angles.
    pub seeds_pos: usize,
    pub seeds_angle: usize,
    /// Minimal two-sided escape time for a point to count as trapped
    /// (default `10 / lambda_est`).
    pub t_trap: f64,
    /// Settling time flowing refined separatrix points onto the trapped set.
    pub t_settle: f64,
    pub escape: EscapeSpec,
    /// Exit-direction sectors used for itinerary labels.
    pub sectors: usize,
    /// Budget of escape-time refinements across all seed pairs.
    pub max_refinements: usize,
}

impl SampleSpec {
    pub fn defaults(pot: &PotentialSpec, energy: f64, delta: f64) -> Self {
        let lambda_est = estimate_exponent(pot, energy);
        let escape = EscapeSpec::for_potential(pot, lambda_est);
        SampleSpec {
            energy,
            delta,
            slab_x1: 0.0,
            seeds_pos: 48,
            seeds_angle: 48,
            t_trap: 10.0 / lambda_est,
            t_settle: 14.0 / lambda_est,
            escape,
            sectors: 12,
            max_refinements: 600,
        }
    }
}

/// Refine inside a differently-classified seed pair by golden-section climb
/// of the escape time.  Near a crossing of the incoming/outgoing set the
/// escape time diverges while exit labels change infinitely often, so the
/// time ridge — not the label boundary — marks the crossing; climbing it
/// converges onto the trapped-set boundary to machine precision.
fn climb_escape_time(
    pot: &PotentialSpec,
    spec: &SampleSpec,
    embed: &dyn Fn(f64) -> Option<PhasePoint>,
    mut a: f64,
    mut b: f64,
    backward: bool,
) -> Result<Option<f64>> {
    let eval = |s: f64| -> Result<f64> {
        match embed(s) {
            None => Ok(-1.0),
            Some(p) => {
                let p = if backward { reverse_momentum(p) } else { p };
                let out = escape_time(pot, p, &spec.escape)?;
                Ok(if out.escaped() { out.time } else { f64::MAX })
            }
        }
    };
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = eval(x1)?;
    let mut f2 = eval(x2)?;
    if f1 < 0.0 && f2 < 0.0 {
        return Ok(None);
    }
    for _ in 0..200 {
        if f1 == f64::MAX {
            return Ok(Some(x1));
        }
        if f2 == f64::MAX {
            return Ok(Some(x2));
        }
        if (b - a).abs() <= 1e-16 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = eval(x2)?;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = eval(x1)?;
        }
    }
    Ok(Some(if f1 >= f2 { x1 } else { x2 }))
}

/// One escape classification of a seed, both directions.
#[derive(Clone, Copy)]
struct SeedFate {
    label_f: Option<u32>,
    label_b: Option<u32>,
    t_f: f64,
    t_b: f64,
}

/// A candidate refinement pair inside one seed family, with its priority.
/// `along_pos`/`fixed` identify the family for 2d grids.
struct PairTask {
    a: f64,
    b: f64,
    backward: bool,
    score: f64,
    order: usize,
    along_pos: bool,
    fixed: f64,
}

/// Collect refinement pairs from adjacent seeds of one 1-parameter family:
/// pairs whose itinerary labels differ (or where either side is censored) are
/// candidates, prioritized by the longer escape time on the relevant side.
fn collect_pairs(
    params: &[f64],
    fates: &[Option<SeedFate>],
    wrap: bool,
    along_pos: bool,
    fixed: f64,
    out: &mut Vec<PairTask>,
) {
    let m = params.len();
    let last = if wrap { m } else { m - 1 };
    for w in 0..last {
        let w2 = (w + 1) % m;
        let (fa, fb) = match (&fates[w], &fates[w2]) {
            (Some(a), Some(b)) => (a, b),
            _ => continue,
        };
        let (mut a, mut b) = (params[w], params[w2]);
        if wrap && w2 == 0 {
            b = params[w] + (params[1] - params[0]);
        }
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        if fa.label_f != fb.label_f || fa.label_f.is_none() || fb.label_f.is_none() {
            let score = fa.t_f.max(fb.t_f);
            out.push(PairTask { a, b, backward: false, score, order: out.len(), along_pos, fixed });
        }
        if fa.label_b != fb.label_b || fa.label_b.is_none() || fb.label_b.is_none() {
            let score = fa.t_b.max(fb.t_b);
            out.push(PairTask { a, b, backward: true, score, order: out.len(), along_pos, fixed });
        }
    }
}

/// Keep the most promising refinement pairs within the budget, longest escape
/// time first; censored seeds sort to the front.
fn prioritize(tasks: &mut Vec<PairTask>, budget: usize) {
    tasks.sort_by(|p, q| {
        q.score
            .partial_cmp(&p.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(p.order.cmp(&q.order))
    });
    tasks.truncate(budget);
}

/// Momentum on the shell `p = E` at position `x` with direction angle `phi`
/// (2d); `None` below the turning level.
fn shell_momentum_2d(pot: &PotentialSpec, x: &[f64; 2], phi: f64, energy: f64) -> Option<[f64; 2]> {
    let kin = energy - pot.eval(x);
    if kin <= 1e-12 {
        return None;
    }
    let r = kin.sqrt();
    Some([r * phi.cos(), r * phi.sin()])
}

/// Sample the trapped set `K_E` inside the energy window: plant seeds on the
/// slab, classify escape itineraries both ways, bisect between neighbours with
/// different itineraries, settle the refined points onto the trapped set by
/// flowing toward it, and keep points whose two-sided escape times clear
/// `t_trap`.
pub fn sample_trapped_set(pot: &PotentialSpec, spec: &SampleSpec) -> Result<TrappedSample> {
    let n = pot.dimension;
    let mut refined: Vec<PhasePoint> = Vec::new();
    let mut seeds = 0usize;
    let mut pairs = 0usize;

    if n == 1 {
        // the slab is the vertical line x = slab_x1; seeds vary in momentum,
        // sweeping energies across the window
        let x0 = spec.slab_x1;
        let v0 = pot.eval(&[x0]);
        let ximax = (spec.energy + spec.delta - v0).max(0.0).sqrt();
        let ximin = -ximax;
        let m = (spec.seeds_angle.max(8)) as i64;
        let embed = |s: f64| -> Option<PhasePoint> {
            let p = PhasePoint::new1(x0, s);
            let e = p.energy(pot);
            if (e - spec.energy).abs() < spec.delta {
                Some(p)
            } else {
                None
            }
        };
        let params: Vec<f64> = (0..=m).map(|k| ximin + (ximax - ximin) * k as f64 / m as f64).collect();
        let mut fates: Vec<Option<SeedFate>> = Vec::with_capacity(params.len());
        for &s in &params {
            match embed(s) {
                None => fates.push(None),
                Some(p) => {
                    seeds += 1;
                    let f = escape_time(pot, p, &spec.escape)?;
                    let b = escape_time(pot, reverse_momentum(p), &spec.escape)?;
                    if !f.escaped() && !b.escaped() {
                        refined.push(p);
                    }
                    fates.push(Some(SeedFate {
                        label_f: f.label(1, spec.sectors),
                        label_b: b.label(1, spec.sectors),
                        t_f: f.time,
                        t_b: b.time,
                    }));
                }
            }
        }
        let mut tasks = Vec::new();
        collect_pairs(&params, &fates, false, false, 0.0, &mut tasks);
        prioritize(&mut tasks, spec.max_refinements);
        for t in &tasks {
            pairs += 1;
            if let Some(s) = climb_escape_time(pot, spec, &embed, t.a, t.b, t.backward)? {
                if let Some(p) = embed(s) {
                    refined.push(settle(pot, spec, p, t.backward)?);
                }
            }
        }
    } else {
        // seeds on the slab x1 = slab_x1, parametrized by (x2, phi)
        let reach = spec.escape.escape_radius / 3.0; // seeds within the interaction region
        let np = spec.seeds_pos.max(4);
        let na = spec.seeds_angle.max(4);
        let positions: Vec<f64> = (0..np)
            .map(|i| -reach + 2.0 * reach * i as f64 / (np - 1) as f64)
            .collect();
        let angles: Vec<f64> = (0..na).map(|j| 2.0 * std::f64::consts::PI * j as f64 / na as f64).collect();
        let mut grid: Vec<Vec<Option<SeedFate>>> = vec![vec![None; na]; np];
        for (i, &x2) in positions.iter().enumerate() {
            for (j, &phi) in angles.iter().enumerate() {
                let x = [spec.slab_x1, x2];
                if let Some(xi) = shell_momentum_2d(pot, &x, phi, spec.energy) {
                    seeds += 1;
                    let p = PhasePoint::new2(x, xi);
                    let f = escape_time(pot, p, &spec.escape)?;
                    let b = escape_time(pot, reverse_momentum(p), &spec.escape)?;
                    if !f.escaped() && !b.escaped() {
                        refined.push(p);
                    }
                    grid[i][j] = Some(SeedFate {
                        label_f: f.label(2, spec.sectors),
                        label_b: b.label(2, spec.sectors),
                        t_f: f.time,
                        t_b: b.time,
                    });
                }
            }
        }
        // neighbour pairs along both grid directions; the angle family wraps
        let mut tasks = Vec::new();
        for j in 0..na {
            let col: Vec<Option<SeedFate>> = (0..np).map(|i| grid[i][j]).collect();
            collect_pairs(&positions, &col, false, true, angles[j], &mut tasks);
        }
        for i in 0..np {
            collect_pairs(&angles, &grid[i], true, false, positions[i], &mut tasks);
        }
        prioritize(&mut tasks, spec.max_refinements);
        for t in &tasks {
            pairs += 1;
            let embed = |s: f64| -> Option<PhasePoint> {
                let (x2, phi) = if t.along_pos { (s, t.fixed) } else { (t.fixed, s) };
                let x = [spec.slab_x1, x2];
                shell_momentum_2d(pot, &x, phi, spec.energy).map(|xi| PhasePoint::new2(x, xi))
            };
            if let Some(s) = climb_escape_time(pot, spec, &embed, t.a, t.b, t.backward)? {
                if let Some(p) = embed(s) {
                    refined.push(settle(pot, spec, p, t.backward)?);
                }
            }
        }
    }

    // keep points that stay trapped both ways past t_trap and sit in the window
    let mut points: Vec<TrappedPoint> = Vec::new();
    for p in refined {
        let e = p.energy(pot);
        if (e - spec.energy).abs() >= spec.delta {
            continue;
        }
        let rec = escape_record(pot, p, &spec.escape)?;
        if rec.forward.time >= spec.t_trap && rec.backward.time >= spec.t_trap {
            points.push(TrappedPoint {
                point: p,
                t_forward: rec.forward.time,
                t_backward: rec.backward.time,
                energy: e,
            });
        }
    }
    // drop exact duplicates from coincident refinements
    points.sort_by(|a, b| {
        (a.point.x[0], a.point.x[1], a.point.xi[0], a.point.xi[1])
            .partial_cmp(&(b.point.x[0], b.point.x[1], b.point.xi[0], b.point.xi[1]))
            .unwrap()
    });
    points.dedup_by(|a, b| {
        let dx = (0..2)
            .map(|k| (a.point.x[k] - b.point.x[k]).abs() + (a.point.xi[k] - b.point.xi[k]).abs())
            .sum::<f64>();
        dx < 1e-9
    });
    let empty = points.is_empty();
    let lambda_est = estimate_exponent(pot, spec.energy);
    Ok(TrappedSample {
        energy: spec.energy,
        delta: spec.delta,
        meta: SampleMeta {
            seeds,
            refined_pairs: pairs,
            kept: points.len(),
            escape_radius: spec.escape.escape_radius,
            t_trap: spec.t_trap,
            lambda_est,
            slab_x1: spec.slab_x1,
            empty,
        },
        points,
    })
}

/// Flow a refined separatrix point toward the trapped set: forward for points
/// on the incoming tail, backward for points on the outgoing tail.
fn settle(pot: &PotentialSpec, spec: &SampleSpec, p: PhasePoint, backward: bool) -> Result<PhasePoint> {
    let t = if backward { -spec.t_settle } else { spec.t_settle };
    flow(pot, p, t, spec.escape.flow)
}

/// Densify a sample along the flow: each point contributes its images at the
/// given knot times (positive or negative), with escape times shifted
/// accordingly; images whose shifted escape times turn negative are dropped.
/// The trapped set is flow invariant, so images stay on it.
pub fn augment_along_flow(
    pot: &PotentialSpec,
    sample: &TrappedSample,
    knots: &[f64],
    flow_spec: FlowSpec,
) -> Result<TrappedSample> {
    let mut points: Vec<TrappedPoint> = sample.points.clone();
    for p in &sample.points {
        for &s in knots {
            if s == 0.0 {
                continue;
            }
            let t_fwd = p.t_forward - s;
            let t_bwd = p.t_backward + s;
            if t_fwd <= 0.0 || t_bwd <= 0.0 {
                continue;
            }
            let q = flow(pot, p.point, s, flow_spec)?;
            points.push(TrappedPoint { point: q, t_forward: t_fwd, t_backward: t_bwd, energy: q.energy(pot) });
        }
    }
    points.sort_by(|a, b| {
        (a.point.x[0], a.point.x[1], a.point.xi[0], a.point.xi[1])
            .partial_cmp(&(b.point.x[0], b.point.x[1], b.point.xi[0], b.point.xi[1]))
            .unwrap()
    });
    points.dedup_by(|a, b| {
        let dx = (0..2)
            .map(|k| (a.point.x[k] - b.point.x[k]).abs() + (a.point.xi[k] - b.point.xi[k]).abs())
            .sum::<f64>();
        dx < 1e-9
    });
    let mut meta = sample.meta.clone();
    meta.kept = points.len();
    meta.empty = points.is_empty();
    Ok(TrappedSample { energy: sample.energy, delta: sample.delta, points, meta })
}

/// Worst-case cone-aperture ratio under `dPhi^{t0}`: vectors on the boundary
/// of the gamma1-cone around `E^{+0}` are pushed forward and re-measured in
/// the frame at the image point; invariance of the cone means the returned
/// defect is at most 1.
pub fn cone_defect(
    pot: &PotentialSpec,
    point: PhasePoint,
    t0: f64,
    gamma1: f64,
    spec: &FrameSpec,
) -> Result<f64> {
    let n = pot.dimension;
    let dims = 2 * n;
    let frame = hyperbolic_frame(pot, point, spec)?;
    let image = flow(pot, point, t0, spec.flow)?;
    let frame_im = hyperbolic_frame(pot, image, spec)?;
    let segments = flow_with_segments(pot, point, &[t0], spec.flow)?;
    let j = segments[0].1;

    let basis_u = weak_unstable_basis(&frame, dims);
    let basis_u_im = weak_unstable_basis(&frame_im, dims);
    let e_minus_im = frame_im.e_minus;

    // decompose v in the (non-orthogonal) basis {E^{+0} image basis, e_minus}
    let decompose = |v: &Tangent| -> (f64, f64) {
        let mut cols: Vec<Tangent> = basis_u_im.clone();
        cols.push(e_minus_im);
        let k = cols.len();
        // normal equations for the small least-squares system
        let mut g = vec![0.0; k * k];
        let mut rhs = vec![0.0; k];
        for i in 0..k {
            for l in 0..k {
                g[i * k + l] = dot(&cols[i], &cols[l], dims);
            }
            rhs[i] = dot(&cols[i], v, dims);
        }
        solve_small(&mut g, &mut rhs, k);
        let mut u_part = [0.0f64; 4];
        for (i, c) in cols.iter().enumerate().take(k - 1) {
            for d in 0..dims {
                u_part[d] += rhs[i] * c[d];
            }
        }
        let mut w_part = [0.0f64; 4];
        for d in 0..dims {
            w_part[d] = rhs[k - 1] * e_minus_im[d];
        }
        (norm(&u_part, dims), norm(&w_part, dims))
    };

    let mut worst: f64 = 0.0;
    // boundary vectors u + gamma1 * (+/- e_minus) for several u directions
    let u_dirs: Vec<Tangent> = if basis_u.len() == 1 {
        vec![basis_u[0]]
    } else {
        (0..8)
            .map(|k| {
                let a = std::f64::consts::PI * k as f64 / 8.0;
                let (c, s) = (a.cos(), a.sin());
                let mut u = [0.0; 4];
                for d in 0..dims {
                    u[d] = c * basis_u[0][d] + s * basis_u[1][d];
                }
                u
            })
            .collect()
    };
    for u in &u_dirs {
        for sign in [1.0, -1.0] {
            let mut v = *u;
            for d in 0..dims {
                v[d] += sign * gamma1 * frame.e_minus[d];
            }
            let pushed = mat_vec(&j, &v, dims);
            let (nu, nw) = decompose(&pushed);
            if nu < 1e-14 {
                return Err(Error::Numerical("cone image has no unstable component".into()));
            }
            worst = worst.max(nw / (gamma1 * nu));
        }
    }
    Ok(worst)
}

/// Gaussian elimination with partial pivoting for tiny systems.
fn solve_small(a: &mut [f64], b: &mut [f64], k: usize) {
    for col in 0..k {
        let mut piv = col;
        for r in col + 1..k {
            if a[r * k + col].abs() > a[piv * k + col].abs() {
                piv = r;
            }
        }
        if piv != col {
            for c in 0..k {
                a.swap(col * k + c, piv * k + c);
            }
            b.swap(col, piv);
        }
        let d = a[col * k + col];
        for r in col + 1..k {
            let f = a[r * k + col] / d;
            for c in col..k {
                a[r * k + c] -= f * a[col * k + c];
            }
            b[r] -= f * b[col];
        }
    }
    for col in (0..k).rev() {
        let mut s = b[col];
        for c in col + 1..k {
            s -= a[col * k + c] * b[c];
        }
        b[col] = s / a[col * k + col];
    }
}

/// Hyperbolic splitting at a trapped point.
#[derive(Debug, Clone, Copy)]
pub struct HyperbolicFrame {
    pub point: PhasePoint,
    /// Unit vector spanning the unstable direction `E^+`.
    pub e_plus: Tangent,
    /// Unit vector spanning the stable direction `E^-`.
    pub e_minus: Tangent,
    /// Hamilton field at the point (not normalized; zero at a fixed point).
    pub h_p: Tangent,
    /// Direction-change of the last power-iteration window (subspace
    /// convergence measure).
    pub residual: f64,
    pub converged: bool,
}

/// Controls for frame extraction.
#[derive(Debug, Clone, Copy)]
pub struct FrameSpec {
    /// Total power-iteration span on each side.
    pub t_converge: f64,
    /// Window length between renormalizations.
    pub t_window: f64,
    /// Convergence tolerance on the direction change per window.
    pub tol_frame: f64,
    pub flow: FlowSpec,
}

impl FrameSpec {
    pub fn defaults(lambda_est: f64) -> Self {
        FrameSpec {
            t_converge: 12.0 / lambda_est,
            t_window: 1.0 / lambda_est,
            tol_frame: 1e-8,
            flow: FlowSpec::default(),
        }
    }
}

/// Project `v` onto the tangent space of the energy shell at `p` (kernel of
/// `dp`), orthogonally.  Skipped in 1d, where the shell tangent at non-fixed
/// points is the flow line alone and the splitting lives in the full plane.
fn project_to_shell(pot: &PotentialSpec, p: &PhasePoint, v: &mut Tangent) {
    let n = pot.dimension;
    if n == 1 {
        return;
    }
    let dims = 2 * n;
    let mut g = [0.0; 2];
    pot.grad(&p.x[..n], &mut g);
    let mut dp = [0.0; 4];
    for k in 0..n {
        dp[k] = g[k];
        dp[n + k] = 2.0 * p.xi[k];
    }
    let nn = dot(&dp, &dp, dims);
    if nn < 1e-24 {
        return;
    }
    let c = dot(v, &dp, dims) / nn;
    for k in 0..dims {
        v[k] -= c * dp[k];
    }
}

fn normalize(v: &mut Tangent, dims: usize) {
    let s = norm(v, dims);
    if s > 0.0 {
        for x in v.iter_mut().take(dims) {
            *x /= s;
        }
    }
}

/// Fix a deterministic sign: make the first component of largest magnitude
/// positive.
fn canonical_sign(v: &mut Tangent, dims: usize) {
    let mut idx = 0;
    for k in 1..dims {
        if v[k].abs() > v[idx].abs() {
            idx = k;
        }
    }
    if v[idx] < 0.0 {
        for x in v.iter_mut().take(dims) {
            *x = -*x;
        }
    }
}

/// Remove the flow component from `v` at `p` (2d only).  The flow direction
/// is neutral, so it dies out of a raw power iteration only at the slow
/// single-exponent rate; quotienting it per step restores the two-exponent
/// gap.  Skipped near fixed points, where the flow direction degenerates and
/// the tangent plane is purely hyperbolic anyway.
fn project_out_flow(pot: &PotentialSpec, p: &PhasePoint, v: &mut Tangent) {
    if pot.dimension == 1 {
        return;
    }
    let dims = 2 * pot.dimension;
    let h = p.hamilton_field(pot);
    let nn = dot(&h, &h, dims);
    if nn < 1e-6 {
        return;
    }
    let c = dot(v, &h, dims) / nn;
    for k in 0..dims {
        v[k] -= c * h[k];
    }
}

/// Power-iterate segment tangent maps along a trajectory ending at the frame
/// point; `segments` are ordered with the last one ending at the point.  Two
/// independent seeds are pushed through the same cocycle; the sine of their
/// final mutual angle is the convergence residual (the direction itself turns
/// along the orbit, so per-step change is not a convergence measure).
fn iterate_direction(
    pot: &PotentialSpec,
    segments: &[(PhasePoint, SmallMat)],
    start_point: PhasePoint,
    dims: usize,
) -> (Tangent, f64) {
    let mut seeds: [Tangent; 2] = [[0.618, -0.414, 0.707, 0.303], [-0.271, 0.818, 0.152, 0.525]];
    for v in seeds.iter_mut() {
        project_to_shell(pot, &start_point, v);
        project_out_flow(pot, &start_point, v);
        normalize(v, dims);
    }
    for (p, j) in segments {
        for v in seeds.iter_mut() {
            let mut w = mat_vec(j, v, dims);
            project_to_shell(pot, p, &mut w);
            project_out_flow(pot, p, &mut w);
            normalize(&mut w, dims);
            *v = w;
        }
    }
    let align = dot(&seeds[0], &seeds[1], dims).abs().min(1.0);
    let residual = (1.0 - align * align).sqrt();
    (seeds[0], residual)
}

/// Extract the hyperbolic frame at a trapped point: `E^+` from forward power
/// iteration of the tangent maps arriving at the point, `E^-` from backward
/// iteration, both constrained to the energy shell.
pub fn hyperbolic_frame(pot: &PotentialSpec, point: PhasePoint, spec: &FrameSpec) -> Result<HyperbolicFrame> {
    let n = pot.dimension;
    let dims = 2 * n;
    let windows = (spec.t_converge / spec.t_window).ceil() as usize;
    let t_span = windows as f64 * spec.t_window;

    // e_plus: start at Phi^{-T} rho, push forward to rho
    let past = flow(pot, point, -t_span, spec.flow)?;
    let knots: Vec<f64> = (1..=windows).map(|k| k as f64 * spec.t_window).collect();
    let fwd_segments = flow_with_segments(pot, past, &knots, spec.flow)?;
    let (mut e_plus, res_plus) = iterate_direction(pot, &fwd_segments, past, dims);

    // e_minus: start at Phi^{+T} rho, pull backward to rho
    let future = flow(pot, point, t_span, spec.flow)?;
    let back_knots: Vec<f64> = (1..=windows).map(|k| -(k as f64) * spec.t_window).collect();
    let back_segments = flow_with_segments(pot, future, &back_knots, spec.flow)?;
    let (mut e_minus, res_minus) = iterate_direction(pot, &back_segments, future, dims);

    canonical_sign(&mut e_plus, dims);
    canonical_sign(&mut e_minus, dims);
    let residual = res_plus.max(res_minus);
    Ok(HyperbolicFrame {
        point,
        e_plus,
        e_minus,
        h_p: point.hamilton_field(pot),
        residual,
        converged: residual <= spec.tol_frame,
    })
}

/// Finite-time unstable Jacobian `lambda^+_t`: log volume expansion of the
/// tangent map on the weak-unstable subspace `E^+ + R H_p` (just `E^+` at a
/// fixed point), evaluated at each requested time.  Times must be positive
/// and increasing.
pub fn unstable_jacobian(
    pot: &PotentialSpec,
    frame: &HyperbolicFrame,
    times: &[f64],
    flow_spec: FlowSpec,
) -> Result<Vec<f64>> {
    let n = pot.dimension;
    let dims = 2 * n;
    // log-volume of the start basis cancels in the expansion ratio
    let basis = weak_unstable_basis(frame, dims);

    // split [0, t_max] into windows at the requested times plus unit steps
    let mut knots: Vec<f64> = Vec::new();
    let t_max = *times.last().unwrap_or(&0.0);
    let step = 0.5;
    let mut t = step;
    while t < t_max - 1e-12 {
        knots.push(t);
        t += step;
    }
    knots.extend_from_slice(times);
    knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    knots.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let segments = flow_with_segments(pot, frame.point, &knots, flow_spec)?;
    let mut lambda = 0.0f64;
    let mut out = Vec::with_capacity(times.len());
    let mut want = times.iter().peekable();
    let mut q = basis;
    for (knot, (_, j)) in knots.iter().zip(&segments) {
        for v in q.iter_mut() {
            *v = mat_vec(j, v, dims);
        }
        lambda += log_volume(&mut q, dims);
        while let Some(&&tw) = want.peek() {
            if (tw - knot).abs() < 1e-9 {
                out.push(lambda);
                want.next();
            } else {
                break;
            }
        }
    }
    Ok(out)
}

/// Orthonormal basis of the weak-unstable subspace `E^{+0}` at the frame
/// point: `{e_plus, H_p/|H_p|}`, or `{e_plus}` alone at a fixed point.  The
/// threshold treats points within sampler precision of a fixed point as the
/// fixed point itself: a flow direction that slow carries no reliable volume
/// growth and is nearly parallel to `e_plus` there.
pub(crate) fn weak_unstable_basis(frame: &HyperbolicFrame, dims: usize) -> Vec<Tangent> {
    let mut basis: Vec<Tangent> = vec![frame.e_plus];
    let hp_norm = norm(&frame.h_p, dims);
    if hp_norm > 1e-3 {
        let mut h = frame.h_p;
        for x in h.iter_mut().take(dims) {
            *x /= hp_norm;
        }
        basis.push(h);
    }
    orthonormalize(&mut basis, dims);
    basis
}

/// Gram-Schmidt in place; returns nothing, panics on rank collapse.
pub(crate) fn orthonormalize(basis: &mut [Tangent], dims: usize) {
    for i in 0..basis.len() {
        for j in 0..i {
            let prev = basis[j];
            let c = dot(&basis[i], &prev, dims);
            for k in 0..dims {
                basis[i][k] -= c * prev[k];
            }
        }
        let s = norm(&basis[i], dims);
        assert!(s > 1e-300, "basis rank collapse");
        for k in 0..dims {
            basis[i][k] /= s;
        }
    }
}

/// Orthonormalize and return the log volume of the parallelepiped spanned
/// before normalization (QR accumulation step).
pub(crate) fn log_volume(basis: &mut [Tangent], dims: usize) -> f64 {
    let mut logv = 0.0;
    for i in 0..basis.len() {
        for j in 0..i {
            let prev = basis[j];
            let c = dot(&basis[i], &prev, dims);
            for k in 0..dims {
                basis[i][k] -= c * prev[k];
            }
        }
        let s = norm(&basis[i], dims);
        assert!(s > 1e-300, "volume collapse");
        logv += s.ln();
        for k in 0..dims {
            basis[i][k] /= s;
        }
    }
    logv
}
