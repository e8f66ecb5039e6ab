//! Experiment configuration: one JSON document per experiment, with dotted
//! command-line overrides applied on top of the file before parsing.

use std::path::{Path, PathBuf};

use bifield::cumulants::SteadyStateOptions;
use bifield::simulator::SimConfig;
use bifield::{validate, Model, ModelParams};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelParams,
    #[serde(default)]
    pub sim: SimBlock,
    #[serde(default)]
    pub kernel: KernelBlock,
    #[serde(default)]
    pub hierarchy: HierarchyBlock,
    #[serde(default)]
    pub cumulants: CumulantBlock,
    #[serde(default)]
    pub oracle: OracleBlock,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimBlock {
    pub torus_side: usize,
    pub record_times: Vec<f64>,
    /// Defaults to the last record time.
    pub t_max: Option<f64>,
    pub observe_sites: Vec<Vec<i64>>,
    pub initial_particles: Vec<Vec<i64>>,
    pub replicates: u64,
    pub event_budget: f64,
    /// Also write one row per replicate, record time and observed site.
    pub write_trajectories: bool,
}

impl Default for SimBlock {
    fn default() -> Self {
        Self {
            torus_side: 32,
            record_times: vec![1.0, 3.0, 5.0],
            t_max: None,
            observe_sites: Vec::new(),
            initial_particles: Vec::new(),
            replicates: 1000,
            event_budget: 1e8,
            write_trajectories: true,
        }
    }
}

impl SimBlock {
    pub fn to_sim_config(&self, seed: u64) -> SimConfig {
        let mut cfg = SimConfig::new(self.torus_side, self.record_times.clone(), seed);
        if let Some(t) = self.t_max {
            cfg.t_max = t;
        }
        cfg.observe_sites = self.observe_sites.clone();
        cfg.initial_particles = self.initial_particles.clone();
        cfg.event_budget = self.event_budget;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelBlock {
    pub times: Vec<f64>,
    /// Sites `y` with `|y_i| ≤ radius` are tabulated.
    pub radius: i64,
    /// Quadrature nodes per axis are `2^level`; defaults by dimension.
    pub level: Option<u32>,
    pub tolerance: f64,
}

impl Default for KernelBlock {
    fn default() -> Self {
        Self {
            times: vec![0.5, 1.0, 2.0, 5.0],
            radius: 20,
            level: None,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierarchyBlock {
    pub torus_side: usize,
    pub k_max: usize,
    pub t_max: f64,
    /// Defaults to the largest stable step.
    pub step: Option<f64>,
    /// Write every n-th grid time to `moments.csv`.
    pub write_every: usize,
}

impl Default for HierarchyBlock {
    fn default() -> Self {
        Self {
            torus_side: 32,
            k_max: 4,
            t_max: 5.0,
            step: None,
            write_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CumulantBlock {
    pub l_max: usize,
    pub tol: f64,
    /// Times at which `χ_1..χ_{l_max}` are reported from the hierarchy table.
    pub times: Vec<f64>,
    pub steady: SteadyStateOptions,
}

impl Default for CumulantBlock {
    fn default() -> Self {
        Self {
            l_max: 4,
            tol: 1e-8,
            times: vec![1.0, 2.0, 5.0],
            steady: SteadyStateOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleBlock {
    pub torus_side: usize,
    pub cap: u32,
    pub times: Vec<f64>,
    pub state_budget: usize,
    /// Simulated replicates compared against the oracle (0 to skip).
    pub replicates: u64,
}

impl Default for OracleBlock {
    fn default() -> Self {
        Self {
            torus_side: 3,
            cap: 4,
            times: vec![1.0, 3.0],
            state_budget: bifield::oracle::DEFAULT_STATE_BUDGET,
            replicates: 0,
        }
    }
}

/// A parsed configuration together with its validated model.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub model: Model,
}

/// Derived quantities echoed next to the resolved configuration.
#[derive(Debug, Clone, Serialize)]
pub struct Derived {
    pub delta: f64,
    pub max_step: f64,
    pub branch_total_rate: f64,
    pub spread_rate: f64,
}

impl Resolved {
    pub fn derived(&self) -> Derived {
        Derived {
            delta: self.model.delta(),
            max_step: self.model.max_step(),
            branch_total_rate: self.model.branch_total_rate(),
            spread_rate: self.model.spread_rate(),
        }
    }
}

const TOP_LEVEL_KEYS: [&str; 2] = ["seed", "output_dir"];

/// Splits `--a.b=value` style arguments from the rest of the command line.
pub fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for arg in args {
        if let Some(body) = arg.strip_prefix("--") {
            if let Some((path, value)) = body.split_once('=') {
                if path.contains('.') || TOP_LEVEL_KEYS.contains(&path) {
                    overrides.push((path.to_string(), value.to_string()));
                    continue;
                }
            }
        }
        rest.push(arg);
    }
    (rest, overrides)
}

/// Sets `path` (dot separated) in `doc`, creating objects as needed. The
/// value is read as JSON when possible and as a string otherwise.
pub fn apply_override(doc: &mut Value, path: &str, raw: &str) -> Result<(), CliError> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Usage(format!("malformed override path '{path}'")));
    }
    for (i, key) in keys.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::Usage(format!("override '{path}': '{}' is not an object", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("path has at least one key")
}

/// Reads a configuration file and applies overrides; validation is left to
/// [`resolve`].
pub fn parse(path: &Path, overrides: &[(String, String)]) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let parse_err = |e: serde_json::Error| CliError::Parse(format!("{}: {e}", path.display()));
    if overrides.is_empty() {
        // straight from the text, so errors carry line and column
        return serde_json::from_str(&text).map_err(parse_err);
    }
    let mut doc: Value = serde_json::from_str(&text).map_err(parse_err)?;
    for (p, v) in overrides {
        apply_override(&mut doc, p, v)?;
    }
    serde_json::from_value(doc).map_err(parse_err)
}

pub fn resolve(config: ExperimentConfig) -> Result<Resolved, CliError> {
    let model = validate(&config.model).map_err(|e| CliError::Validation(e.to_string()))?;
    check_consistency(&config, &model)?;
    Ok(Resolved { config, model })
}

fn check_consistency(c: &ExperimentConfig, model: &Model) -> Result<(), CliError> {
    let bad = |m: String| Err(CliError::Validation(m));
    let last_record = c.sim.record_times.iter().copied().fold(0.0, f64::max);
    if c.hierarchy.t_max < last_record {
        return bad(format!(
            "hierarchy.t_max = {} is shorter than the last record time {last_record}",
            c.hierarchy.t_max
        ));
    }
    if let Some(cut) = c.cumulants.times.iter().copied().find(|&t| t > c.hierarchy.t_max) {
        return bad(format!("cumulants.times contains {cut} beyond hierarchy.t_max"));
    }
    if c.hierarchy.k_max == 0 || c.hierarchy.torus_side == 0 {
        return bad("hierarchy.k_max and hierarchy.torus_side must be positive".into());
    }
    if c.cumulants.l_max == 0 || c.cumulants.l_max > c.hierarchy.k_max {
        return bad(format!(
            "cumulants.l_max = {} must lie in 1..=hierarchy.k_max ({})",
            c.cumulants.l_max, c.hierarchy.k_max
        ));
    }
    if let Some(h) = c.hierarchy.step {
        if !(h > 0.0) || h > model.max_step() {
            return bad(format!("hierarchy.step = {h} must lie in (0, {}]", model.max_step()));
        }
    }
    c.sim
        .to_sim_config(c.seed)
        .check(model.dim())
        .map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(())
}
