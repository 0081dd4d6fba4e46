//! Run configuration: a strict JSON schema with explicit defaults and
//! dotted-key overrides.
//!
//! A user file is deep-merged onto the default configuration, so any
//! section or field may be omitted. Objects carrying a `kind` tag are
//! replaced rather than merged when the tag changes. Keys that do not
//! exist in the schema are collected and reported together.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::experiments::homog::{BoundaryProfile, Mesoscales};
use crate::lagrangian::{CoefficientLaw, NonlinearitySpec};
use crate::solvers::SolveOptions;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub law: CoefficientLaw,
    pub nonlinearity: NonlinearitySpec,
    pub mesh: MeshSection,
    pub solver: SolveOptions,
    pub experiment: ExperimentSection,
    pub ensemble: EnsembleSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub size: usize,
    pub master_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Directory under which run directories are created; the
    /// `NLHOMOG_OUTPUT_ROOT` environment variable takes precedence.
    pub root: String,
    /// Fill the `wall_ms` columns. Off by default so that reruns are
    /// byte-identical.
    pub record_timing: bool,
}

/// Grid and Monte-Carlo parameters of a tabulated effective Lagrangian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSection {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub spacing: f64,
    pub n_list: Vec<u32>,
    pub ensemble_size: usize,
    pub master_seed: u64,
    /// Load a table written by a previous `lbar` run instead of computing it.
    pub path: Option<String>,
}

/// Parameters of every experiment; each experiment reads the fields it
/// needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Box exponent of single-scale experiments.
    pub n: u32,
    /// Box exponents of multi-scale experiments.
    pub n_list: Vec<u32>,
    pub xi: Vec<f64>,
    pub g: BoundaryProfile,
    pub f: BoundaryProfile,
    pub table: TableSection,
    pub mesoscales: Option<Mesoscales>,
    pub mollify: bool,
    pub cutoff: bool,
    pub big_r: f64,
    pub big_n: u32,
    pub k_ratio: f64,
    pub sigma: f64,
    /// Slope gaps `|ξ₁ − ξ₂|` (along the first axis) of the corrector
    /// differences; empty disables them.
    pub corrector_gaps: Vec<f64>,
    pub ratio_bound: f64,
    /// Perturbation sizes `2^{-j}`, `j = 0..=s_levels`.
    pub s_levels: u32,
    pub min_slope: f64,
    pub xi0: Option<Vec<f64>>,
    pub min_exponent: f64,
    pub gamma: f64,
    pub holder_radius: f64,
    pub k_list: Vec<u32>,
    pub fd_step: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            law: CoefficientLaw::iid_two_point(0.0, 2.0, 2),
            nonlinearity: NonlinearitySpec::perturbed_sqrt(3.0),
            mesh: MeshSection { h: 0.5 },
            solver: SolveOptions::default(),
            experiment: ExperimentSection::default(),
            ensemble: EnsembleSection {
                size: 16,
                master_seed: 1,
            },
            output: OutputSection {
                root: "runs".into(),
                record_timing: false,
            },
        }
    }
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            n: 2,
            n_list: vec![2, 3, 4],
            xi: vec![0.5, 0.25],
            g: BoundaryProfile::QuadraticBump {
                slope: vec![0.5, 0.25],
                amplitude: 0.25,
            },
            f: BoundaryProfile::Sinusoidal {
                slope: vec![0.0, 0.0],
                amplitude: 1.0,
                frequency: 1.0,
            },
            table: TableSection {
                lo: vec![0.0, -0.25],
                hi: vec![1.0, 0.75],
                spacing: 0.25,
                n_list: vec![2, 3],
                ensemble_size: 8,
                master_seed: 7,
                path: None,
            },
            mesoscales: None,
            mollify: true,
            cutoff: true,
            big_r: 27.0,
            big_n: 4,
            k_ratio: 10.0,
            sigma: 1.0,
            corrector_gaps: vec![1.0, 0.1],
            ratio_bound: 2.0,
            s_levels: 8,
            min_slope: 1.05,
            xi0: None,
            min_exponent: 1.5,
            gamma: 1.0,
            holder_radius: 2.0,
            k_list: vec![1, 2],
            fd_step: 0.05,
        }
    }
}

impl Config {
    /// Parses a configuration document with the given overrides applied.
    pub fn from_json_str(text: &str, overrides: &[String]) -> Result<Self> {
        let user: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        Self::from_value(user, overrides)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json_str(&text, overrides)
    }

    pub fn from_value(mut user: Value, overrides: &[String]) -> Result<Self> {
        if !user.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        for o in overrides {
            apply_override(&mut user, o)?;
        }
        let mut merged = serde_json::to_value(Config::default())?;
        let mut unknown = Vec::new();
        merge(&mut merged, &user, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown config keys: {}", unknown.join(", "))));
        }
        let cfg: Config =
            serde_json::from_value(merged).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.law.validate(&self.nonlinearity)?;
        crate::mesh::validate_mesh_width(self.mesh.h)?;
        if !(self.solver.tol > 0.0) {
            return Err(Error::Config("solver.tol must be positive".into()));
        }
        if self.ensemble.size == 0 {
            return Err(Error::Config("ensemble.size must be at least 1".into()));
        }
        Ok(())
    }

    /// Full configuration with every default spelled out.
    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn kind_of(v: &Value) -> Option<&Value> {
    v.as_object().and_then(|o| o.get("kind"))
}

/// Merges `user` into `base`, recording keys of `user` that `base` lacks.
fn merge(base: &mut Value, user: &Value, path: &str, unknown: &mut Vec<String>) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(k) {
                    None => unknown.push(key),
                    Some(slot) => {
                        let retagged = matches!((kind_of(slot), kind_of(v)), (Some(a), Some(b)) if a != b);
                        if slot.is_object() && v.is_object() && !retagged {
                            merge(slot, v, &key, unknown);
                        } else {
                            *slot = v.clone();
                        }
                    }
                }
            }
        }
        (b, u) => *b = u.clone(),
    }
}

/// Applies `dotted.key=value`; the value is parsed as JSON and falls back
/// to a plain string.
pub fn apply_override(target: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override '{spec}' has an empty key segment")));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut cur = target;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match cur {
            Value::Object(o) => o,
            other => {
                *other = Value::Object(Map::new());
                other.as_object_mut().expect("just created")
            }
        };
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = obj.entry((*part).to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("loop returns on the last segment")
}
