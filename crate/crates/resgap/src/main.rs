//! Command-line driver: classical trapped-set, pressure, dimension, and gap
//! prediction on one side; quantum resonances with the gap certificate,
//! cutoff resolvent norms, and Husimi fields on the other; plus a combined
//! report.  Identical config and seed produce byte-identical outputs.

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use resgap::config::{ExperimentConfig, LoadedConfig};
use resgap::dynamics::flow::{flow_path, PhasePoint};
use resgap::dynamics::potential::PotentialSpec;
use resgap::error::{Error, Result};
use resgap::phase_space::fbi_transform;
use resgap::pressure::{dense_trapped_sample, dimension, Method, PressureEngine};
use resgap::quantum::resolvent::resolvent_norm;
use resgap::quantum::resonances::{eigen_resonances_with_states, TOL_RES};
use resgap::report::{
    assemble_at, build_report, classical_prediction, pressure_spec, resonance_box,
    resonances_all, sample_spec, RunManifest,
};
use resgap::svg;
use resgap::trapping::sample_trapped_set;
use serde_json::json;
use std::path::PathBuf;

/// Resonance-gap toolkit: classical hyperbolic trapping versus quantum
/// scattering resonances for smooth potentials.
#[derive(Parser)]
#[command(name = "resgap", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Worker threads (the RESGAP_THREADS variable overrides this flag).
    #[arg(long, global = true, value_name = "K")]
    threads: Option<usize>,
    /// Write SVG plots alongside tables.
    #[arg(long, global = true)]
    plot: bool,
    /// Output directory (overrides the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Multiplier applied to every default tolerance.
    #[arg(long, global = true, default_value_t = 1.0, value_name = "X")]
    tol_scale: f64,
}

#[derive(Subcommand)]
enum Cmd {
    /// Dump classical trajectories seeded on the energy shell.
    Flow { config: PathBuf },
    /// Sample the trapped set at the configured energy.
    TrappedSet { config: PathBuf },
    /// Pressure curves by both methods, with the gap verdict and root bracket.
    Pressure { config: PathBuf },
    /// Trapped-set dimension from the pressure root, with a box-count check.
    Dimension { config: PathBuf },
    /// Classical gap prediction from the pressure at exponent 1/2.
    GapPredict { config: PathBuf },
    /// Quantum resonances in the configured box, for every h.
    Resonances { config: PathBuf },
    /// Certify the predicted resonance-free strip on the quantum tables.
    GapCheck { config: PathBuf },
    /// Cutoff resolvent norm at the center energy, for every h.
    Resolvent { config: PathBuf },
    /// Husimi field of the resonant state closest to the center energy.
    Husimi {
        config: PathBuf,
        /// Color the heatmap on a log scale.
        #[arg(long)]
        log_scale: bool,
    },
    /// One JSON bundling the classical prediction and the quantum measurement.
    Report { config: PathBuf },
}

fn main() {
    let cli = Cli::parse();
    init_threads(cli.threads);
    if let Err(e) = run(&cli) {
        let code = e.exit_code();
        let doc = json!({"error": {"kind": error_kind(&e), "message": e.to_string(), "exit": code}});
        eprintln!("{doc}");
        std::process::exit(code);
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Numerical(_) => "numerical",
        Error::CertificateInapplicable(_) => "certificate",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

fn init_threads(flag: Option<usize>) {
    let n = std::env::var("RESGAP_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .or(flag);
    if let Some(n) = n.filter(|&n| n > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Flow { config } => cmd_flow(&Ctx::new(config, cli)?),
        Cmd::TrappedSet { config } => cmd_trapped_set(&Ctx::new(config, cli)?),
        Cmd::Pressure { config } => cmd_pressure(&Ctx::new(config, cli)?),
        Cmd::Dimension { config } => cmd_dimension(&Ctx::new(config, cli)?),
        Cmd::GapPredict { config } => cmd_gap_predict(&Ctx::new(config, cli)?),
        Cmd::Resonances { config } => cmd_resonances(&Ctx::new(config, cli)?),
        Cmd::GapCheck { config } => cmd_gap_check(&Ctx::new(config, cli)?),
        Cmd::Resolvent { config } => cmd_resolvent(&Ctx::new(config, cli)?),
        Cmd::Husimi { config, log_scale } => cmd_husimi(&Ctx::new(config, cli)?, *log_scale),
        Cmd::Report { config } => cmd_report(&Ctx::new(config, cli)?),
    }
}

struct Ctx {
    loaded: LoadedConfig,
    out: PathBuf,
    plot: bool,
    tol_scale: f64,
}

impl Ctx {
    fn new(config: &PathBuf, cli: &Cli) -> Result<Ctx> {
        if !(cli.tol_scale > 0.0) {
            return Err(Error::Config("tol-scale must be positive".into()));
        }
        let loaded = ExperimentConfig::load(config)?;
        let out = cli.out.clone().unwrap_or_else(|| loaded.config.outputs.directory.clone());
        std::fs::create_dir_all(&out)?;
        let plot = cli.plot || loaded.config.outputs.plot || loaded.config.wants("svg");
        Ok(Ctx { loaded, out, plot, tol_scale: cli.tol_scale })
    }

    fn write_csv(&self, name: &str, body: &str) -> Result<()> {
        if self.loaded.config.wants("csv") {
            // every table leads with the config hash so it stays traceable
            let text = format!("# config_hash={}\n{body}", self.loaded.hash);
            std::fs::write(self.out.join(name), text)?;
        }
        Ok(())
    }

    fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<()> {
        if self.loaded.config.wants("json") {
            let mut text = serde_json::to_string_pretty(value)?;
            text.push('\n');
            std::fs::write(self.out.join(name), text)?;
        }
        Ok(())
    }

    fn write_svg(&self, name: &str, body: &str) -> Result<()> {
        if self.plot {
            std::fs::write(self.out.join(name), body)?;
        }
        Ok(())
    }
}

/// Drop the header line of a CSV body (for concatenating tables).
fn strip_header(csv: &str) -> &str {
    match csv.find('\n') {
        Some(i) => &csv[i + 1..],
        None => "",
    }
}

fn cmd_flow(ctx: &Ctx) -> Result<()> {
    let pot = &ctx.loaded.potential;
    let cfg = &ctx.loaded.config;
    let n = pot.dimension;
    let e = cfg.energy.e;
    let ps = pressure_spec(&ctx.loaded);
    let t_flow = cfg.classical.t_flow.unwrap_or(3.0 * ps.t0);
    let n_flow = cfg.classical.n_flow.unwrap_or(8);
    let r = pot.interaction_radius();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts: Vec<PhasePoint> = Vec::new();
    let mut attempts = 0usize;
    while starts.len() < n_flow && attempts < 1000 * n_flow.max(1) {
        attempts += 1;
        if n == 1 {
            let x = rng.gen_range(-r..r);
            let kin = e - pot.eval(&[x]);
            if kin <= 1e-9 {
                continue;
            }
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            starts.push(PhasePoint::new1(x, sign * kin.sqrt()));
        } else {
            let x = [rng.gen_range(-r..r), rng.gen_range(-r..r)];
            let kin = e - pot.eval(&x);
            if kin <= 1e-9 {
                continue;
            }
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            let sp = kin.sqrt();
            starts.push(PhasePoint::new2(x, [sp * phi.cos(), sp * phi.sin()]));
        }
    }
    if starts.is_empty() {
        return Err(Error::Numerical(format!(
            "no classically allowed seeds at energy {e} within radius {r:.3}"
        )));
    }
    let times: Vec<f64> = (0..=160).map(|k| k as f64 * t_flow / 160.0).collect();
    let paths: Vec<Vec<PhasePoint>> = starts
        .par_iter()
        .map(|&p| flow_path(pot, p, &times, ps.flow))
        .collect::<Result<_>>()?;
    let mut body =
        String::from(if n == 1 { "traj,t,x1,xi1,energy\n" } else { "traj,t,x1,x2,xi1,xi2,energy\n" });
    for (k, path) in paths.iter().enumerate() {
        for (i, p) in path.iter().enumerate() {
            body.push_str(&format!("{k},{}", times[i]));
            for d in 0..n {
                body.push_str(&format!(",{}", p.x[d]));
            }
            for d in 0..n {
                body.push_str(&format!(",{}", p.xi[d]));
            }
            body.push_str(&format!(",{}\n", p.energy(pot)));
        }
    }
    ctx.write_csv("flow.csv", &body)?;
    ctx.write_json(
        "flow.json",
        &json!({
            "config_hash": ctx.loaded.hash,
            "seed": cfg.seed,
            "trajectories": paths.len(),
            "t_flow": t_flow,
            "samples_per_trajectory": times.len(),
        }),
    )?;
    if ctx.plot {
        let names: Vec<String> = (0..paths.len()).map(|k| format!("traj {k}")).collect();
        let pts: Vec<Vec<(f64, f64)>> = paths
            .iter()
            .map(|path| {
                path.iter()
                    .enumerate()
                    .map(|(i, p)| if n == 1 { (times[i], p.x[0]) } else { (p.x[0], p.x[1]) })
                    .collect()
            })
            .collect();
        let series: Vec<svg::Series> = names
            .iter()
            .zip(&pts)
            .map(|(name, points)| svg::Series { name, points, scatter: false })
            .collect();
        let (xl, yl) = if n == 1 { ("t", "x") } else { ("x1", "x2") };
        ctx.write_svg("flow.svg", &svg::plot("classical trajectories", xl, yl, &series))?;
    }
    println!("flow: {} trajectories over t in [0, {t_flow:.3}]", paths.len());
    Ok(())
}

fn cmd_trapped_set(ctx: &Ctx) -> Result<()> {
    let n = ctx.loaded.potential.dimension;
    let sample = sample_trapped_set(&ctx.loaded.potential, &sample_spec(&ctx.loaded))?;
    ctx.write_csv("trapped_set.csv", &sample.to_csv(n))?;
    ctx.write_json(
        "trapped_set.json",
        &json!({
            "config_hash": ctx.loaded.hash,
            "energy": sample.energy,
            "delta": sample.delta,
            "count": sample.points.len(),
            "meta": sample.meta,
        }),
    )?;
    if ctx.plot {
        let pts: Vec<(f64, f64)> = sample
            .points
            .iter()
            .map(|p| {
                if n == 1 {
                    (p.point.x[0], p.point.xi[0])
                } else {
                    (p.point.x[0], p.point.x[1])
                }
            })
            .collect();
        let (xl, yl) = if n == 1 { ("x", "xi") } else { ("x1", "x2") };
        let series = [svg::Series { name: "trapped", points: &pts, scatter: true }];
        ctx.write_svg("trapped_set.svg", &svg::plot("trapped set", xl, yl, &series))?;
    }
    println!(
        "trapped-set: kept {} points{}",
        sample.points.len(),
        if sample.meta.empty { " (empty shell)" } else { "" }
    );
    Ok(())
}

/// Bracket the root of `s -> P(s)` against an already-built engine; `None`
/// when the pressure has no root in `s >= 0`.
fn root_bracket(engine: &PressureEngine) -> Result<Option<(f64, f64)>> {
    let (p0, u0, _) = engine.pressure_separated(0.0)?;
    if p0 < -u0.max(1e-6) {
        return Ok(None);
    }
    if p0 <= 0.0 {
        return Ok(Some((0.0, 1e-2)));
    }
    let mut lo = 0.0;
    let mut hi = f64::NAN;
    for k in 1..=12 {
        let s = 0.25 * k as f64;
        let (p, _, _) = engine.pressure_separated(s)?;
        if p < 0.0 {
            hi = s;
            break;
        }
        lo = s;
    }
    if hi.is_nan() {
        return Ok(None);
    }
    while hi - lo > 1e-2 {
        let mid = 0.5 * (lo + hi);
        let (p, _, _) = engine.pressure_separated(mid)?;
        if p > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some((lo, hi)))
}

fn cmd_pressure(ctx: &Ctx) -> Result<()> {
    let loaded = &ctx.loaded;
    let spec = pressure_spec(loaded);
    let sample = dense_trapped_sample(&loaded.potential, &sample_spec(loaded), &spec)?;
    if sample.meta.empty {
        return Err(Error::Numerical(
            "no trapping detected on this shell; pressure is undefined".into(),
        ));
    }
    let engine = PressureEngine::new(&loaded.potential, &sample, spec)?;
    let s_values = loaded
        .config
        .classical
        .s_values
        .clone()
        .unwrap_or_else(|| (0..=10).map(|k| k as f64 / 10.0).collect());
    let sep = engine.curve(&s_values, Method::Separated)?;
    let cov = engine.curve(&s_values, Method::Cover)?;
    let mut body = sep.to_csv();
    body.push_str(strip_header(&cov.to_csv()));
    ctx.write_csv("pressure.csv", &body)?;
    let (p_half, u_half, _) = engine.pressure_separated(0.5)?;
    let gap_verdict = p_half + u_half < 0.0;
    let bracket = root_bracket(&engine)?;
    ctx.write_json(
        "pressure.json",
        &json!({
            "config_hash": loaded.hash,
            "energy": loaded.config.energy.e,
            "delta": loaded.config.energy.delta,
            "p_half": p_half,
            "p_half_uncertainty": u_half,
            "gap_verdict": gap_verdict,
            "d_h_bracket": bracket,
            "curves": { "separated": sep, "cover": cov },
        }),
    )?;
    if ctx.plot {
        let a: Vec<(f64, f64)> =
            sep.s_values.iter().copied().zip(sep.p_values.iter().copied()).collect();
        let b: Vec<(f64, f64)> =
            cov.s_values.iter().copied().zip(cov.p_values.iter().copied()).collect();
        let series = [
            svg::Series { name: "separated", points: &a, scatter: false },
            svg::Series { name: "cover", points: &b, scatter: false },
        ];
        ctx.write_svg("pressure.svg", &svg::plot("topological pressure", "s", "P(s)", &series))?;
    }
    println!("pressure: P(1/2) = {p_half:.6} +- {u_half:.6}; gap verdict {gap_verdict}");
    Ok(())
}

fn default_slabs(pot: &PotentialSpec) -> Vec<f64> {
    let mut d_min = f64::INFINITY;
    for i in 0..pot.bumps.len() {
        for j in (i + 1)..pot.bumps.len() {
            let d: f64 = pot.bumps[i]
                .center
                .iter()
                .zip(&pot.bumps[j].center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d_min = d_min.min(d);
        }
    }
    if d_min.is_finite() {
        vec![0.0, d_min / 4.0, -d_min / 4.0]
    } else {
        vec![0.0]
    }
}

fn cmd_dimension(ctx: &Ctx) -> Result<()> {
    let loaded = &ctx.loaded;
    let spec = pressure_spec(loaded);
    let sample = dense_trapped_sample(&loaded.potential, &sample_spec(loaded), &spec)?;
    let slabs = loaded
        .config
        .classical
        .slabs
        .clone()
        .unwrap_or_else(|| default_slabs(&loaded.potential));
    let result = dimension(&loaded.potential, &sample, &spec, &slabs)?;
    ctx.write_csv(
        "dimension.csv",
        &format!(
            "d_h,bracket_lo,bracket_hi,dim_k,box_section,box_transversal,uncertainty\n\
             {},{},{},{},{},{},{}\n",
            result.d_h,
            result.bracket.0,
            result.bracket.1,
            result.dim_k,
            result.box_section.unwrap_or(f64::NAN),
            result.box_transversal.unwrap_or(f64::NAN),
            result.uncertainty_at_root,
        ),
    )?;
    ctx.write_json(
        "dimension.json",
        &json!({
            "config_hash": loaded.hash,
            "slabs": slabs,
            "result": result,
        }),
    )?;
    println!(
        "dimension: d_H = {:.4} in [{:.4}, {:.4}]; box cross-check {}",
        result.d_h,
        result.bracket.0,
        result.bracket.1,
        result
            .box_transversal
            .map(|d| format!("{d:.4}"))
            .unwrap_or_else(|| "unavailable".into()),
    );
    Ok(())
}

fn cmd_gap_predict(ctx: &Ctx) -> Result<()> {
    let prediction = classical_prediction(&ctx.loaded)?;
    let mut body = String::from("energy,p_half,uncertainty\n");
    for &(e, p, u) in &prediction.per_energy {
        body.push_str(&format!("{e},{p},{u}\n"));
    }
    ctx.write_csv("gap_predict.csv", &body)?;
    ctx.write_json(
        "gap_predict.json",
        &json!({
            "config_hash": ctx.loaded.hash,
            "prediction": prediction,
        }),
    )?;
    match prediction.gamma {
        Some(g) => println!("gap-predict: gamma = {g:.6}"),
        None => println!("gap-predict: no gap predicted (pressure at 1/2 not negative)"),
    }
    Ok(())
}

fn cmd_resonances(ctx: &Ctx) -> Result<()> {
    let loaded = &ctx.loaded;
    let bx = resonance_box(loaded)?;
    let sets = resonances_all(loaded, ctx.tol_scale)?;
    let mut body = String::new();
    for (i, set) in sets.iter().enumerate() {
        let csv = set.to_csv();
        body.push_str(if i == 0 { &csv } else { strip_header(&csv) });
    }
    ctx.write_csv("resonances.csv", &body)?;
    ctx.write_json(
        "resonances.json",
        &json!({
            "manifest": RunManifest::new(loaded),
            "search_box": bx,
            "sets": sets,
        }),
    )?;
    if ctx.plot {
        let names: Vec<String> = sets.iter().map(|s| format!("h = {}", s.h)).collect();
        let pts: Vec<Vec<(f64, f64)>> = sets
            .iter()
            .map(|s| s.entries.iter().map(|r| (r.re, r.im)).collect())
            .collect();
        let series: Vec<svg::Series> = names
            .iter()
            .zip(&pts)
            .map(|(name, points)| svg::Series { name, points, scatter: true })
            .collect();
        ctx.write_svg("resonances.svg", &svg::plot("resonances", "Re z", "Im z", &series))?;
    }
    for set in &sets {
        println!("resonances: h = {}: {} in box", set.h, set.entries.len());
    }
    Ok(())
}

fn cmd_gap_check(ctx: &Ctx) -> Result<()> {
    let report = build_report(&ctx.loaded, ctx.tol_scale)?;
    let runs: Vec<serde_json::Value> = report
        .runs
        .iter()
        .map(|r| {
            json!({
                "h": r.h,
                "verdict": r.gap.verdict,
                "n_resonances": r.resonances.entries.len(),
                "violators": r.gap.violators,
            })
        })
        .collect();
    ctx.write_json(
        "gap_check.json",
        &json!({
            "manifest": report.manifest,
            "gamma": report.gamma,
            "margin": report.margin,
            "search_box": report.search_box,
            "runs": runs,
            "verdict": report.verdict,
        }),
    )?;
    println!("gap-check: predicted gamma = {:.6}", report.gamma);
    for r in &report.runs {
        println!(
            "gap-check: h = {}: verdict {} ({} resonances, {} violators)",
            r.h,
            r.gap.verdict,
            r.resonances.entries.len(),
            r.gap.violators.len()
        );
    }
    println!("gap-check: verdict {}", report.verdict);
    Ok(())
}

fn cmd_resolvent(ctx: &Ctx) -> Result<()> {
    let loaded = &ctx.loaded;
    let e = loaded.config.energy.e;
    let rows: Vec<(f64, f64)> = loaded
        .config
        .quantum
        .h_list
        .par_iter()
        .map(|&h| {
            let op = assemble_at(loaded, h)?;
            Ok((h, resolvent_norm(&op, e, loaded.config.seed)?))
        })
        .collect::<Result<_>>()?;
    let mut body = String::from("h,e,norm,scaled\n");
    let mut scaled_pts = Vec::new();
    for &(h, norm) in &rows {
        let scaled = norm * h / (1.0 / h).ln();
        body.push_str(&format!("{h},{e},{norm},{scaled}\n"));
        scaled_pts.push((h, scaled));
    }
    ctx.write_csv("resolvent.csv", &body)?;
    ctx.write_json(
        "resolvent.json",
        &json!({
            "manifest": RunManifest::new(loaded),
            "e": e,
            "rows": rows.iter().map(|&(h, norm)| {
                json!({"h": h, "norm": norm, "scaled": norm * h / (1.0 / h).ln()})
            }).collect::<Vec<_>>(),
        }),
    )?;
    if ctx.plot {
        let series = [svg::Series { name: "norm * h / log(1/h)", points: &scaled_pts, scatter: false }];
        ctx.write_svg(
            "resolvent.svg",
            &svg::plot("cutoff resolvent scaling", "h", "scaled norm", &series),
        )?;
    }
    for &(h, norm) in &rows {
        println!("resolvent: h = {h}: norm = {norm:.6e}, scaled = {:.6e}", norm * h / (1.0 / h).ln());
    }
    Ok(())
}

fn cmd_husimi(ctx: &Ctx, log_scale: bool) -> Result<()> {
    let loaded = &ctx.loaded;
    let cfg = &loaded.config;
    let h = cfg.quantum.h_list[0];
    let op = assemble_at(loaded, h)?;
    let bx = resonance_box(loaded)?;
    let (set, states) =
        eigen_resonances_with_states(&op, &bx, TOL_RES * ctx.tol_scale, cfg.seed)?;
    if set.entries.is_empty() {
        return Err(Error::Numerical("no resonant state found in the search box".into()));
    }
    let e = cfg.energy.e;
    let idx = (0..set.entries.len())
        .min_by(|&a, &b| {
            let da = (set.entries[a].re - e).abs();
            let db = (set.entries[b].re - e).abs();
            da.partial_cmp(&db).expect("finite distances")
        })
        .expect("nonempty entries");
    // the operator's grid, not the config's: assembly may have refined it
    let grid = &op.grid;
    let axis = grid.axis();
    let stride = axis.len().div_ceil(160).max(1);
    let centers: Vec<f64> = axis.iter().copied().step_by(stride).collect();
    let xi_max = 1.6 * (e + cfg.energy.delta).max(0.0).sqrt();
    let field = fbi_transform(grid, h, &states[idx], &centers, xi_max)?;
    ctx.write_csv("husimi.csv", &field.to_csv())?;
    ctx.write_json(
        "husimi.json",
        &json!({
            "config_hash": loaded.hash,
            "h": h,
            "resonance": set.entries[idx],
            "mass": field.mass,
            "xi_max": xi_max,
            "centers": centers.len(),
        }),
    )?;
    if ctx.plot {
        ctx.write_svg(
            "husimi.svg",
            &svg::heatmap("husimi field", "x", "xi", &field.x, &field.xi, &field.values, log_scale),
        )?;
    }
    let z = set.entries[idx];
    println!("husimi: h = {h}: state at z = {:.6} {:+.6}i, mass {:.4}", z.re, z.im, field.mass);
    Ok(())
}

fn cmd_report(ctx: &Ctx) -> Result<()> {
    let report = build_report(&ctx.loaded, ctx.tol_scale)?;
    ctx.write_json("report.json", &report)?;
    println!(
        "report: gamma = {:.6}, verdict {} over {} h values",
        report.gamma,
        report.verdict,
        report.runs.len()
    );
    Ok(())
}
