//! Run orchestration and the combined report: classical gap prediction on
//! one side, quantum resonance tables with the gap certificate on the other,
//! bundled into a single JSON document whose verdict is the certificate
//! evaluated on its own tables.

use crate::config::{hash_value, EnergyWindow, LoadedConfig};
use crate::error::{Error, Result};
use crate::pressure::{predicted_gap, GapPrediction, PressureSpec};
use crate::quantum::operator::{Deformation, QuantumOp};
use crate::quantum::resonances::{
    check_gap, eigen_resonances, GapCheck, ResonanceBox, ResonanceSet, TOL_RES,
};
use crate::trapping::{estimate_exponent, SampleSpec};
use rayon::prelude::*;
use serde::Serialize;

/// Identity block stamped on quantum output manifests.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub potential_hash: String,
    pub grid_hash: String,
    pub deformation_hash: String,
    pub seed: u64,
}

impl RunManifest {
    pub fn new(loaded: &LoadedConfig) -> Self {
        RunManifest {
            config_hash: loaded.hash.clone(),
            potential_hash: hash_value(&loaded.potential),
            grid_hash: hash_value(&loaded.config.quantum.grid),
            deformation_hash: hash_value(&loaded.config.quantum.deformation),
            seed: loaded.config.seed,
        }
    }
}

/// Trapped-set sampler controls from the config, with overrides applied.
pub fn sample_spec(loaded: &LoadedConfig) -> SampleSpec {
    let e = loaded.config.energy;
    let mut spec = SampleSpec::defaults(&loaded.potential, e.e, e.delta);
    let c = &loaded.config.classical;
    if let Some(n) = c.seeds_pos {
        spec.seeds_pos = n;
    }
    if let Some(n) = c.seeds_angle {
        spec.seeds_angle = n;
    }
    spec
}

/// Pressure-engine controls from the config, with overrides applied.
pub fn pressure_spec(loaded: &LoadedConfig) -> PressureSpec {
    let lambda = estimate_exponent(&loaded.potential, loaded.config.energy.e);
    let mut spec = PressureSpec::defaults(lambda);
    if let Some(n) = loaded.config.classical.max_points {
        spec.max_points = n;
    }
    spec
}

/// Search box for resonance eigensolves: half-width from the energy window
/// and depth at 90% of what the deformation resolves, unless the config says
/// otherwise.
pub fn resonance_box(loaded: &LoadedConfig) -> Result<ResonanceBox> {
    let q = &loaded.config.quantum;
    let e = loaded.config.energy;
    let depth_limit = match &q.deformation {
        Deformation::Scaling(s) => s.theta * e.e / 2.0,
        Deformation::Cap(c) => c.strength / 2.0,
        Deformation::None => {
            return Err(Error::Config(
                "resonance search needs a deformation (scaling or cap)".into(),
            ))
        }
    };
    let bx = ResonanceBox {
        energy: e.e,
        half_width: q.box_half_width.unwrap_or(e.delta),
        depth: q.box_depth.unwrap_or(0.9 * depth_limit),
    };
    bx.validate()?;
    Ok(bx)
}

/// The configured grid refined for one `h`: the point count doubles until
/// the semiclassical wavelength is resolved, so one config can serve a
/// decreasing `h_list`.  Refinement never coarsens below the configured
/// count, and it refuses to grow past what dense eigensolves can carry.
pub fn grid_for(loaded: &LoadedConfig, h: f64) -> Result<crate::quantum::grid::GridSpec> {
    let mut grid = loaded.config.quantum.grid;
    let cap = match grid.dimension {
        1 => 8192,
        _ => 256,
    };
    while grid.points_per_wavelength(h) < 4.0 {
        if grid.points * 2 > cap {
            return Err(Error::Config(format!(
                "resolving h = {h} over half-width {} needs more than {cap} points per axis; \
                 shrink the box or raise h",
                grid.half_width
            )));
        }
        grid.points *= 2;
    }
    Ok(grid)
}

/// Assemble the configured operator at one `h`.
pub fn assemble_at(loaded: &LoadedConfig, h: f64) -> Result<QuantumOp> {
    QuantumOp::assemble(
        &loaded.potential,
        grid_for(loaded, h)?,
        h,
        loaded.config.quantum.deformation,
    )
}

/// Resonances in the configured box at one `h`.
pub fn resonances_at(loaded: &LoadedConfig, h: f64, tol_scale: f64) -> Result<ResonanceSet> {
    let op = assemble_at(loaded, h)?;
    let bx = resonance_box(loaded)?;
    eigen_resonances(&op, &bx, TOL_RES * tol_scale, loaded.config.seed)
}

/// Resonance tables for every configured `h`, in `h_list` order.
pub fn resonances_all(loaded: &LoadedConfig, tol_scale: f64) -> Result<Vec<ResonanceSet>> {
    loaded
        .config
        .quantum
        .h_list
        .par_iter()
        .map(|&h| resonances_at(loaded, h, tol_scale))
        .collect()
}

/// Classical prediction, with the gap rate it implies.
pub fn classical_prediction(loaded: &LoadedConfig) -> Result<GapPrediction> {
    predicted_gap(&loaded.potential, &sample_spec(loaded), &pressure_spec(loaded))
}

/// One semiclassical parameter's measurement and certificate.
#[derive(Debug, Clone, Serialize)]
pub struct HRun {
    pub h: f64,
    pub resonances: ResonanceSet,
    pub gap: GapCheck,
}

/// The combined classical-vs-quantum report.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub manifest: RunManifest,
    pub energy: EnergyWindow,
    pub classical: GapPrediction,
    /// Gap rate fed to the certificate (the classical prediction).
    pub gamma: f64,
    pub margin: f64,
    pub search_box: ResonanceBox,
    pub runs: Vec<HRun>,
    /// Conjunction of the per-`h` certificate verdicts.
    pub verdict: bool,
}

/// Run the full pipeline for one config: predict the gap classically, solve
/// for resonances at every `h`, and certify the predicted strip on each
/// table.
pub fn build_report(loaded: &LoadedConfig, tol_scale: f64) -> Result<Report> {
    let classical = classical_prediction(loaded)?;
    let gamma = classical.gamma.ok_or_else(|| {
        Error::CertificateInapplicable(
            "no classical gap predicted (pressure at 1/2 is not negative)".into(),
        )
    })?;
    let margin = (loaded.config.quantum.gap_margin * tol_scale).min(0.99);
    let bx = resonance_box(loaded)?;
    let sets = resonances_all(loaded, tol_scale)?;
    let mut runs = Vec::with_capacity(sets.len());
    for set in sets {
        let gap = check_gap(&set, &bx, gamma, margin)?;
        runs.push(HRun { h: set.h, resonances: set, gap });
    }
    let verdict = runs.iter().all(|r| r.gap.verdict);
    Ok(Report {
        manifest: RunManifest::new(loaded),
        energy: loaded.config.energy,
        classical,
        gamma,
        margin,
        search_box: bx,
        runs,
        verdict,
    })
}
