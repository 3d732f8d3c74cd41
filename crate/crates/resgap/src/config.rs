//! Experiment configuration: one versioned JSON document naming the
//! potential, the energy window, classical sampling controls, the quantum
//! discretization, and output options.  A canonical content hash of the
//! resolved configuration is stamped on every file a run produces, so any
//! output can be traced back to the exact inputs that made it.

use crate::dynamics::potential::PotentialSpec;
use crate::error::{Error, Result};
use crate::quantum::grid::GridSpec;
use crate::quantum::operator::Deformation;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

/// Potential given inline or by reference to a separate potential JSON file
/// (resolved relative to the config file's directory).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PotentialRef {
    File { file: PathBuf },
    Inline(PotentialSpec),
}

/// Center energy and half-width of the spectral window under study.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyWindow {
    pub e: f64,
    pub delta: f64,
}

/// Classical sampling and pressure controls; absent fields fall back to
/// defaults derived from the potential and energy.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassicalConfig {
    pub seeds_pos: Option<usize>,
    pub seeds_angle: Option<usize>,
    pub max_points: Option<usize>,
    /// Exponent grid for pressure curves.
    pub s_values: Option<Vec<f64>>,
    /// Poincare slabs `x1 = c` used for section box counts.
    pub slabs: Option<Vec<f64>>,
    /// Horizon of trajectory dumps.
    pub t_flow: Option<f64>,
    /// Number of dumped trajectories.
    pub n_flow: Option<usize>,
}

fn default_margin() -> f64 {
    0.1
}

/// Quantum discretization: grid, spectral deformation, and the semiclassical
/// parameters to sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantumConfig {
    pub grid: GridSpec,
    pub deformation: Deformation,
    /// Strictly decreasing list of semiclassical parameters.
    pub h_list: Vec<f64>,
    /// Search-box depth below the real axis; defaults to 90% of what the
    /// deformation resolves.
    #[serde(default)]
    pub box_depth: Option<f64>,
    /// Search-box half-width around the center energy; defaults to the
    /// energy window half-width.
    #[serde(default)]
    pub box_half_width: Option<f64>,
    /// Safety margin of the gap certificate, as a fraction of the predicted
    /// depth.
    #[serde(default = "default_margin")]
    pub gap_margin: f64,
}

/// Where and in which formats results are written.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<String>,
    pub plot: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: PathBuf::from("out"),
            formats: vec!["csv".into(), "json".into()],
            plot: false,
        }
    }
}

/// The full experiment description parsed from a config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub potential: PotentialRef,
    pub energy: EnergyWindow,
    #[serde(default)]
    pub classical: ClassicalConfig,
    pub quantum: QuantumConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

/// A config with its potential reference resolved and its canonical hash.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub potential: PotentialSpec,
    /// Hex SHA-256 of the resolved config in canonical (sorted-key) JSON.
    pub hash: String,
}

impl ExperimentConfig {
    /// Parse, resolve the potential reference, and validate.
    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut config: ExperimentConfig = serde_json::from_str(&text)?;
        let potential = match &config.potential {
            PotentialRef::Inline(p) => p.clone(),
            PotentialRef::File { file } => {
                let base = path.parent().unwrap_or(Path::new("."));
                let full = base.join(file);
                if !full.exists() {
                    return Err(Error::Config(format!(
                        "referenced potential file {} does not exist",
                        full.display()
                    )));
                }
                PotentialSpec::from_json(&std::fs::read_to_string(&full)?)?
            }
        };
        config.potential = PotentialRef::Inline(potential.clone());
        config.validate(&potential)?;
        let hash = hash_value(&config);
        Ok(LoadedConfig { config, potential, hash })
    }

    pub fn validate(&self, potential: &PotentialSpec) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported config schema {} (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        potential.validate()?;
        if !self.energy.e.is_finite() || !(self.energy.delta > 0.0) {
            return Err(Error::Config("energy window needs finite e and positive delta".into()));
        }
        if self.quantum.h_list.is_empty() {
            return Err(Error::Config("h_list must not be empty".into()));
        }
        for w in self.quantum.h_list.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::Config(format!(
                    "h_list must be strictly decreasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if self.quantum.h_list.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::Config("h values must be positive".into()));
        }
        self.quantum.grid.validate()?;
        match &self.quantum.deformation {
            Deformation::None => {}
            Deformation::Cap(c) => c.validate()?,
            Deformation::Scaling(s) => s.validate()?,
        }
        if !(0.0..1.0).contains(&self.quantum.gap_margin) {
            return Err(Error::Config("gap_margin must lie in [0, 1)".into()));
        }
        for f in &self.outputs.formats {
            if f != "csv" && f != "json" && f != "svg" {
                return Err(Error::Config(format!("unknown output format {f:?}")));
            }
        }
        Ok(())
    }

    pub fn wants(&self, format: &str) -> bool {
        self.outputs.formats.iter().any(|f| f == format)
    }
}

/// Hex SHA-256 of a value's canonical JSON form (sorted object keys), so the
/// hash is independent of field order and whitespace in source files.
pub fn hash_value<T: Serialize>(value: &T) -> String {
    let canon = serde_json::to_value(value).and_then(|v| serde_json::to_string(&v));
    let bytes = canon.expect("config values serialize to JSON");
    let digest = Sha256::digest(bytes.as_bytes());
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::grid::Boundary;

    fn minimal_json() -> String {
        r#"{
            "schema": 1,
            "potential": {"format": 1, "kind": "eckart",
                          "bumps": [{"amplitude": 1.0, "center": [0.0], "width": 1.0}],
                          "dimension": 1},
            "energy": {"e": 1.0, "delta": 0.2},
            "quantum": {
                "grid": {"dimension": 1, "half_width": 12.0, "points": 256,
                         "boundary": "periodic_fourier"},
                "deformation": {"type": "scaling", "theta": 0.4, "mode": "global"},
                "h_list": [0.25, 0.125]
            },
            "seed": 7
        }"#
        .to_string()
    }

    fn write_config(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("config.json");
        std::fs::write(&p, text).expect("write config");
        p
    }

    #[test]
    fn test_minimal_config_loads_with_defaults() {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = write_config(dir.path(), &minimal_json());
        let loaded = ExperimentConfig::load(&path).expect("minimal config should load");
        assert_eq!(loaded.config.seed, 7, "seed should come from the file");
        assert_eq!(loaded.config.outputs.directory, PathBuf::from("out"), "default out dir");
        assert!(loaded.config.wants("csv") && loaded.config.wants("json"), "default formats");
        assert_eq!(loaded.config.quantum.gap_margin, 0.1, "default margin");
        assert_eq!(loaded.potential.dimension, 1, "potential resolved inline");
        assert_eq!(loaded.hash.len(), 64, "sha-256 hex hash");
    }

    #[test]
    fn test_hash_ignores_whitespace_and_key_order() {
        let dir = tempfile::tempdir().expect("tempdir");
        let a = ExperimentConfig::load(&write_config(dir.path(), &minimal_json()))
            .expect("load a");
        let reordered = minimal_json().replace(
            r#""e": 1.0, "delta": 0.2"#,
            r#""delta": 0.2,   "e": 1.0"#,
        );
        assert_ne!(reordered, minimal_json(), "reordering should change the text");
        let b = ExperimentConfig::load(&write_config(dir.path(), &reordered)).expect("load b");
        assert_eq!(a.hash, b.hash, "canonical hash should not see key order");
    }

    #[test]
    fn test_nondecreasing_h_list_rejected() {
        let dir = tempfile::tempdir().expect("tempdir");
        let bad = minimal_json().replace("[0.25, 0.125]", "[0.125, 0.25]");
        let err = ExperimentConfig::load(&write_config(dir.path(), &bad))
            .expect_err("increasing h_list must be rejected");
        assert_eq!(err.exit_code(), 2, "schema violations are config errors");
    }

    #[test]
    fn test_negative_width_is_schema_error() {
        let dir = tempfile::tempdir().expect("tempdir");
        let bad = minimal_json().replace(r#""width": 1.0"#, r#""width": -1.0"#);
        let err = ExperimentConfig::load(&write_config(dir.path(), &bad))
            .expect_err("negative width must be rejected");
        assert_eq!(err.exit_code(), 2, "invalid potential is a config error");
    }

    #[test]
    fn test_missing_potential_file_rejected() {
        let dir = tempfile::tempdir().expect("tempdir");
        let with_file = minimal_json().replace(
            r#"{"format": 1, "kind": "eckart",
                          "bumps": [{"amplitude": 1.0, "center": [0.0], "width": 1.0}],
                          "dimension": 1}"#,
            r#"{"file": "nowhere.json"}"#,
        );
        let err = ExperimentConfig::load(&write_config(dir.path(), &with_file))
            .expect_err("dangling potential reference must be rejected");
        match err {
            Error::Config(msg) => {
                assert!(msg.contains("does not exist"), "message should name the problem: {msg}")
            }
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn test_potential_file_reference_resolves() {
        let dir = tempfile::tempdir().expect("tempdir");
        let pot = PotentialSpec::standard_eckart();
        std::fs::write(
            dir.path().join("pot.json"),
            serde_json::to_string(&pot).expect("potential to json"),
        )
        .expect("write potential");
        let with_file = minimal_json().replace(
            r#"{"format": 1, "kind": "eckart",
                          "bumps": [{"amplitude": 1.0, "center": [0.0], "width": 1.0}],
                          "dimension": 1}"#,
            r#"{"file": "pot.json"}"#,
        );
        let loaded = ExperimentConfig::load(&write_config(dir.path(), &with_file))
            .expect("file reference should resolve");
        assert_eq!(loaded.potential.bumps.len(), 1, "resolved bump list");
        match loaded.config.potential {
            PotentialRef::Inline(_) => {}
            PotentialRef::File { .. } => panic!("loading should inline the reference"),
        }
    }

    #[test]
    fn test_grid_deserializes_inside_config() {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = write_config(dir.path(), &minimal_json());
        let loaded = ExperimentConfig::load(&path).expect("load");
        assert_eq!(loaded.config.quantum.grid.boundary, Boundary::PeriodicFourier);
        assert_eq!(loaded.config.quantum.grid.points, 256);
    }
}
