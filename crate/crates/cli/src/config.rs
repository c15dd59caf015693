//! Experiment configuration: built-in defaults per experiment, deep-merged
//! with a JSON file, then with command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use sgflow::simulate::NoiseRoot;
use sgflow::DesignFamily;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Experiment {
    /// Ridge, gradient-flow, SGD and Euler SGF coefficient paths.
    Paths,
    /// Two-dimensional trajectories over the loss surface and the
    /// univariate SGD / GBM / OU comparison.
    Contour1d,
    /// The ratio g(t) between the gradient-flow and ridge coefficient norms.
    GCurve,
    /// Risk curves of ridge, gradient flow, gradient descent, exact SGD and
    /// the SGF risk bound, plus optimal stopping times.
    RiskCurves,
    /// Coefficient-error bound against simulated SGF-to-ridge distance.
    CoeffError,
    /// Exact SGD moments against SGD and Euler SGF ensembles.
    VerifyMoments,
    /// Path-wise and optimally-stopped risk ratios.
    Ratios,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Paths => "paths",
            Experiment::Contour1d => "contour1d",
            Experiment::GCurve => "g_curve",
            Experiment::RiskCurves => "risk_curves",
            Experiment::CoeffError => "coeff_error",
            Experiment::VerifyMoments => "verify_moments",
            Experiment::Ratios => "ratios",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Fully resolved configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Output directory; `out/<experiment>` when null.
    pub out: Option<PathBuf>,
    pub parallel: bool,
    pub in_sample: bool,
    pub problem: ProblemConfig,
    pub sgd: SgdSection,
    pub grid: GridConfig,
    pub mc: McConfig,
    pub univariate: UnivariateConfig,
    pub g_curve: GCurveConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub n: usize,
    pub p: usize,
    pub family: DesignFamily,
    pub rho: f64,
    pub sigma: f64,
    pub snr: Option<f64>,
    pub beta0_in_row_space: bool,
    /// Design seed; the top-level seed when null.
    pub seed: Option<u64>,
    /// Problem document to load instead of synthesizing one.
    pub document: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdSection {
    /// Chosen from the loss-decay step-size rule when null.
    pub epsilon: Option<f64>,
    pub m: usize,
    pub safety_factor: f64,
    pub k_max: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub points: usize,
    /// Drops grid times above this value.
    pub t_max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub replicates: usize,
    pub eta_draws: usize,
    /// Explicit iteration counts; otherwise `checkpoint_count` grid-aligned
    /// counts.
    pub checkpoints: Option<Vec<usize>>,
    pub checkpoint_count: usize,
    pub root: NoiseRoot,
    pub antithetic: bool,
    pub z_threshold: f64,
    pub keep_paths: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnivariateConfig {
    pub x: Vec<f64>,
    pub beta_init: f64,
    pub epsilon: f64,
    pub m: usize,
    /// `round(20/(Gε))` when null.
    pub k_max: Option<usize>,
    pub replicates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GCurveConfig {
    pub mu: f64,
    pub big_l: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
}

fn base_defaults() -> Value {
    json!({
        "seed": 0,
        "out": null,
        "parallel": true,
        "in_sample": false,
        "problem": {
            "n": 100,
            "p": 500,
            "family": {"kind": "gaussian"},
            "rho": 0.5,
            "sigma": 1.0,
            "snr": 1.0,
            "beta0_in_row_space": false,
            "seed": null,
            "document": null
        },
        "sgd": {"epsilon": null, "m": 20, "safety_factor": 0.9, "k_max": null},
        "grid": {"lambda_min": 2f64.powi(-15), "lambda_max": 2f64.powi(15), "points": 200, "t_max": null},
        "mc": {
            "replicates": 1000,
            "eta_draws": 30,
            "checkpoints": null,
            "checkpoint_count": 40,
            "root": "factored",
            "antithetic": false,
            "z_threshold": 4.0,
            "keep_paths": 20
        },
        "univariate": {"x": [1.0, -0.5, 2.0], "beta_init": 1.0, "epsilon": 0.01, "m": 2, "k_max": null, "replicates": 10000},
        "g_curve": {"mu": 1.0, "big_l": 1.0, "t_min": 1e-3, "t_max": 1e3, "points": 10000}
    })
}

fn experiment_defaults(experiment: Experiment) -> Value {
    match experiment {
        Experiment::Paths => json!({
            "problem": {"n": 50, "p": 10},
            "sgd": {"epsilon": 0.01, "m": 10},
            "grid": {"lambda_min": 1e-2, "lambda_max": 1e2},
            "mc": {"root": "symmetric"}
        }),
        Experiment::Contour1d => json!({
            "problem": {"n": 3, "p": 2},
            "sgd": {"epsilon": 0.01, "m": 2, "k_max": 1000},
            "mc": {"root": "symmetric", "keep_paths": 5}
        }),
        Experiment::GCurve | Experiment::RiskCurves | Experiment::Ratios => json!({}),
        Experiment::CoeffError => json!({
            "grid": {"t_max": 5.0},
            "mc": {"replicates": 5}
        }),
        Experiment::VerifyMoments => json!({
            "problem": {"n": 50, "p": 10},
            "sgd": {"epsilon": 0.01, "m": 10},
            "mc": {"replicates": 20000, "checkpoints": [10, 100, 500], "root": "symmetric"}
        }),
    }
}

/// Default configuration of an experiment as a JSON tree.
pub fn defaults(experiment: Experiment) -> Value {
    let mut v = base_defaults();
    merge(&mut v, experiment_defaults(experiment));
    v
}

/// Recursively merges `patch` into `base`; objects merge key by key, any
/// other value replaces.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets a dotted key (`mc.replicates=200`). The value is parsed as JSON,
/// and taken as a string when that fails.
pub fn apply_override(tree: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not of the form key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("override {assignment:?} has an empty key segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(obj) => obj,
            other => {
                // a null section (e.g. an unset option) becomes an object
                if other.is_null() {
                    *other = Value::Object(Map::new());
                    other.as_object_mut().expect("just set")
                } else {
                    return Err(CliError::Config(format!(
                        "override {key}: {} is not an object",
                        parts[..i].join(".")
                    )));
                }
            }
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Object(Map::new()));
    }
    unreachable!("split yields at least one segment")
}

/// Command-line inputs that shape the configuration.
#[derive(Clone, Debug, Default)]
pub struct Sources<'a> {
    pub file: Option<&'a Path>,
    pub seed: Option<u64>,
    pub out: Option<&'a Path>,
    pub overrides: &'a [String],
}

/// Resolves defaults, file, overrides and flags (in increasing precedence)
/// into a validated configuration.
pub fn resolve(experiment: Experiment, sources: &Sources<'_>) -> Result<Config, CliError> {
    let mut tree = defaults(experiment);
    if let Some(path) = sources.file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
        if !file.is_object() {
            return Err(CliError::Config(format!("config {} must be a JSON object", path.display())));
        }
        merge(&mut tree, file);
    }
    for assignment in sources.overrides {
        apply_override(&mut tree, assignment)?;
    }
    if let Some(seed) = sources.seed {
        tree["seed"] = json!(seed);
    }
    if let Some(out) = sources.out {
        tree["out"] = json!(out);
    }
    let config: Config = serde_path_to_error::deserialize(tree)
        .map_err(|e| CliError::Config(format!("{}: {}", e.path(), e.inner())))?;
    config.validate(experiment)?;
    Ok(config)
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

impl Config {
    /// Checks that do not need the problem itself; the library validates the
    /// rest.
    pub fn validate(&self, experiment: Experiment) -> Result<(), CliError> {
        let g = &self.grid;
        check(g.lambda_min > 0.0 && g.lambda_max > g.lambda_min, || {
            format!("grid: need 0 < lambda_min < lambda_max, got {} and {}", g.lambda_min, g.lambda_max)
        })?;
        check(g.points >= 2, || "grid.points: need at least 2".into())?;
        if let Some(t) = g.t_max {
            check(t > 0.0, || format!("grid.t_max: must be positive, got {t}"))?;
        }
        if let Some(e) = self.sgd.epsilon {
            check(e > 0.0 && e.is_finite(), || format!("sgd.epsilon: must be positive, got {e}"))?;
        }
        check(self.sgd.m >= 1, || "sgd.m: must be at least 1".into())?;
        check(self.sgd.safety_factor > 0.0 && self.sgd.safety_factor <= 1.0, || {
            format!("sgd.safety_factor: must lie in (0, 1], got {}", self.sgd.safety_factor)
        })?;
        check(self.mc.replicates >= 2, || "mc.replicates: need at least 2".into())?;
        check(self.mc.eta_draws >= 2, || "mc.eta_draws: need at least 2".into())?;
        check(self.mc.checkpoint_count >= 1, || "mc.checkpoint_count: need at least 1".into())?;
        check(self.mc.z_threshold > 0.0, || "mc.z_threshold: must be positive".into())?;
        if let Some(ks) = &self.mc.checkpoints {
            check(!ks.is_empty() && ks.windows(2).all(|w| w[0] < w[1]), || {
                "mc.checkpoints: must be non-empty and strictly increasing".into()
            })?;
        }
        if self.problem.document.is_none() {
            check(self.problem.n >= 1 && self.problem.p >= 1, || "problem: n and p must be positive".into())?;
            check(self.sgd.m <= self.problem.n, || {
                format!("sgd.m: batch size {} exceeds n = {}", self.sgd.m, self.problem.n)
            })?;
        }
        if experiment == Experiment::Contour1d && self.problem.document.is_none() {
            check(self.problem.p == 2, || format!("problem.p: contour1d needs p = 2, got {}", self.problem.p))?;
        }
        let gc = &self.g_curve;
        check(gc.mu > 0.0 && gc.big_l >= gc.mu, || "g_curve: need 0 < mu <= big_l".into())?;
        check(gc.t_min > 0.0 && gc.t_max > gc.t_min && gc.points >= 2, || {
            "g_curve: need 0 < t_min < t_max and points >= 2".into()
        })?;
        Ok(())
    }

    pub fn out_dir(&self, experiment: Experiment) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| Path::new("out").join(experiment.name()))
    }

    /// SHA-256 of the resolved configuration with the output directory
    /// removed, over compact JSON with sorted keys.
    pub fn hash(&self, experiment: Experiment) -> String {
        let mut tree = serde_json::to_value(self).expect("config serializes");
        tree.as_object_mut().expect("object").remove("out");
        let canonical = json!({"experiment": experiment.name(), "config": tree});
        let digest = Sha256::digest(serde_json::to_string(&canonical).expect("serializes").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
