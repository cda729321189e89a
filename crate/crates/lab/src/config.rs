//! Experiment configuration: strict TOML parsing, per-experiment defaults and
//! validation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use nelson_core::benchmarks::Units;
use nelson_core::schrodinger::HbarConvention;
use serde::{Deserialize, Serialize};

pub const EXPERIMENTS: [&str; 8] = [
    "triangle",
    "energy-conservation",
    "hbar-consistency",
    "estimator-bias",
    "noise-constant-scaling",
    "hidden-decomposition",
    "circle-wallstrom",
    "time-reversal",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_nodes: Option<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hbar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub osmotic_coupling: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hbar_convention: Option<HbarConvention>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub walkers: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Every k-th walker goes into the snapshot CSV.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_stride: Option<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dts: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_times: Option<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CircleSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<f64>>,
}

/// One experiment run. Sections an experiment does not read must stay empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub grid: GridSection,
    pub params: ParamsSection,
    pub ensemble: EnsembleSection,
    pub oracle: OracleSection,
    pub estimator: EstimatorSection,
    pub circle: CircleSection,
    pub tolerances: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub key: String,
    pub message: String,
}

impl Violation {
    fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

/// Parsed config plus any keys the schema does not know.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub config: ExperimentConfig,
    pub unknown_keys: Vec<String>,
}

pub fn parse(text: &str) -> Result<Parsed, Violation> {
    let de = toml::Deserializer::new(text);
    let mut unknown_keys = Vec::new();
    let config: ExperimentConfig = serde_ignored::deserialize(de, |path| unknown_keys.push(path.to_string()))
        .map_err(|e| Violation::new("<file>", e.to_string().trim().to_string()))?;
    Ok(Parsed { config, unknown_keys })
}

/// Parse and validate config text; empty when the config is runnable.
pub fn validate_text(text: &str) -> Vec<Violation> {
    match parse(text) {
        Err(v) => vec![v],
        Ok(p) => {
            let mut out: Vec<Violation> = p
                .unknown_keys
                .iter()
                .map(|k| Violation::new(k.clone(), format!("unknown key `{k}`")))
                .collect();
            out.extend(validate(&p.config));
            out
        }
    }
}

fn tol(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn units_section(convention: bool, osmotic: bool) -> ParamsSection {
    ParamsSection {
        mass: Some(1.0),
        hbar: Some(1.0),
        osmotic_coupling: osmotic.then_some(1.0),
        hbar_convention: convention.then_some(HbarConvention::TwoNu),
    }
}

impl ExperimentConfig {
    /// Fully populated default for a registered experiment; `None` otherwise.
    pub fn defaults(experiment: &str) -> Option<Self> {
        let mut c = Self {
            experiment: experiment.to_string(),
            output_dir: Some(PathBuf::from("nelson-lab-out").join(experiment)),
            ..Self::default()
        };
        match experiment {
            "triangle" => {
                c.grid.n_nodes = Some(512);
                c.params = units_section(true, true);
                c.ensemble = EnsembleSection {
                    walkers: Some(100_000),
                    dt: Some(1e-3),
                    seed: Some(2024),
                    snapshot_stride: Some(100),
                    ..Default::default()
                };
                c.tolerances = tol(&[("l1", 0.05), ("clipped_mass", 1e-6)]);
            }
            "energy-conservation" => {
                c.grid.n_nodes = Some(512);
                c.params = units_section(true, true);
                c.oracle.dt = Some(1e-3);
                c.tolerances = tol(&[("drift", 5e-3), ("refinement_gain", 2.0)]);
            }
            "hbar-consistency" => {
                c.grid.n_nodes = Some(512);
                c.params = units_section(false, true);
                c.oracle.dt = Some(1e-3);
                c.tolerances = tol(&[("order_band", 1.5), ("plateau_gain", 1.5)]);
            }
            "estimator-bias" => {
                c.grid.n_nodes = Some(2048);
                c.params = units_section(true, true);
                c.ensemble = EnsembleSection {
                    walkers: Some(100_000),
                    dt: Some(1e-3),
                    seed: Some(2024),
                    ..Default::default()
                };
                c.oracle.dt = Some(1e-5);
                c.estimator.alphas = Some(nelson_core::estimators::DEFAULT_ALPHAS.to_vec());
                c.tolerances = tol(&[("slope_ratio", 0.1), ("symmetric_sigma", 3.0)]);
            }
            "noise-constant-scaling" => {
                c.grid.n_nodes = Some(256);
                c.params = units_section(true, true);
                c.ensemble = EnsembleSection {
                    walkers: Some(100_000),
                    seed: Some(7),
                    ..Default::default()
                };
                c.estimator.dts = Some(vec![4e-3, 2e-3, 1e-3]);
                c.estimator.n_times = Some(12);
                c.tolerances = tol(&[("exponent", 0.1), ("amplitude", 0.05)]);
            }
            "hidden-decomposition" => {
                c.grid.n_nodes = Some(129);
                c.params = units_section(true, true);
                c.ensemble.dt = Some(1e-3);
                c.tolerances = tol(&[("identity", 1e-10), ("realization", 1e-9)]);
            }
            "circle-wallstrom" => {
                c.grid.n_nodes = Some(256);
                c.params = units_section(false, false);
                c.ensemble = EnsembleSection {
                    walkers: Some(100_000),
                    dt: Some(1e-2),
                    t_final: Some(10.0),
                    seed: Some(11),
                    ..Default::default()
                };
                c.circle.w = Some(vec![0.0, 0.3, 1.0, 2.0]);
                c.tolerances = tol(&[
                    ("omega", 1e-10),
                    ("norm", 1e-10),
                    ("l1", 0.03),
                    ("winding_sigma", 3.0),
                ]);
            }
            "time-reversal" => {
                c.grid.n_nodes = Some(256);
                c.params = units_section(true, true);
                c.ensemble = EnsembleSection {
                    walkers: Some(100_000),
                    dt: Some(1e-3),
                    t_final: Some(2.0),
                    seed: Some(4),
                    ..Default::default()
                };
                c.tolerances = tol(&[("mc_sigma", 3.0)]);
            }
            _ => return None,
        }
        Some(c)
    }

    /// User values laid over the experiment's defaults. Keys the experiment
    /// does not read are kept so that [`validate`] can flag them.
    pub fn resolved(&self) -> Self {
        let Some(d) = Self::defaults(&self.experiment) else {
            return self.clone();
        };
        let mut tolerances = d.tolerances.clone();
        tolerances.extend(self.tolerances.clone());
        Self {
            experiment: self.experiment.clone(),
            output_dir: self.output_dir.clone().or(d.output_dir),
            grid: GridSection {
                n_nodes: self.grid.n_nodes.or(d.grid.n_nodes),
            },
            params: ParamsSection {
                mass: self.params.mass.or(d.params.mass),
                hbar: self.params.hbar.or(d.params.hbar),
                osmotic_coupling: self.params.osmotic_coupling.or(d.params.osmotic_coupling),
                hbar_convention: self.params.hbar_convention.or(d.params.hbar_convention),
            },
            ensemble: EnsembleSection {
                walkers: self.ensemble.walkers.or(d.ensemble.walkers),
                dt: self.ensemble.dt.or(d.ensemble.dt),
                t_final: self.ensemble.t_final.or(d.ensemble.t_final),
                seed: self.ensemble.seed.or(d.ensemble.seed),
                snapshot_stride: self.ensemble.snapshot_stride.or(d.ensemble.snapshot_stride),
            },
            oracle: OracleSection {
                dt: self.oracle.dt.or(d.oracle.dt),
            },
            estimator: EstimatorSection {
                alphas: self.estimator.alphas.clone().or(d.estimator.alphas),
                dts: self.estimator.dts.clone().or(d.estimator.dts),
                n_times: self.estimator.n_times.or(d.estimator.n_times),
            },
            circle: CircleSection {
                w: self.circle.w.clone().or(d.circle.w),
            },
            tolerances,
        }
    }

    pub fn units(&self) -> Units {
        Units {
            mass: self.params.mass.unwrap_or(1.0),
            hbar: self.params.hbar.unwrap_or(1.0),
            osmotic_coupling: self.params.osmotic_coupling.unwrap_or(1.0),
            convention: self.params.hbar_convention.unwrap_or_default(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.n_nodes.unwrap_or(0) as usize
    }

    pub fn walkers(&self) -> usize {
        self.ensemble.walkers.unwrap_or(0) as usize
    }

    pub fn seed(&self) -> u64 {
        self.ensemble.seed.unwrap_or(0)
    }

    pub fn tolerance(&self, key: &str) -> f64 {
        self.tolerances[key]
    }
}

fn positive(out: &mut Vec<Violation>, key: &str, v: Option<f64>) {
    if let Some(x) = v {
        if !(x > 0.0 && x.is_finite()) {
            out.push(Violation::new(key, format!("must be positive and finite, got {x}")));
        }
    }
}

fn non_negative(out: &mut Vec<Violation>, key: &str, v: Option<f64>) {
    if let Some(x) = v {
        if !(x >= 0.0 && x.is_finite()) {
            out.push(Violation::new(key, format!("must be non-negative and finite, got {x}")));
        }
    }
}

/// Pure check of a parsed config; an empty list means it can run.
pub fn validate(cfg: &ExperimentConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let Some(defaults) = ExperimentConfig::defaults(&cfg.experiment) else {
        let msg = if cfg.experiment.is_empty() {
            "missing; choose one of the registered experiments".to_string()
        } else {
            format!("unknown experiment `{}`; known: {}", cfg.experiment, EXPERIMENTS.join(", "))
        };
        return vec![Violation::new("experiment", msg)];
    };

    // keys the experiment does not read
    let user = serde_json::to_value(cfg).expect("config serializes");
    let known = serde_json::to_value(&defaults).expect("config serializes");
    for section in ["grid", "params", "ensemble", "oracle", "estimator", "circle"] {
        if let Some(obj) = user[section].as_object() {
            for key in obj.keys() {
                if known[section].get(key).is_none() {
                    out.push(Violation::new(
                        format!("{section}.{key}"),
                        format!("not used by experiment `{}`", cfg.experiment),
                    ));
                }
            }
        }
    }
    for key in cfg.tolerances.keys() {
        if !defaults.tolerances.contains_key(key) {
            out.push(Violation::new(
                format!("tolerances.{key}"),
                format!(
                    "no such tolerance for `{}`; known: {}",
                    cfg.experiment,
                    defaults.tolerances.keys().cloned().collect::<Vec<_>>().join(", ")
                ),
            ));
        }
    }
    for (key, v) in &cfg.tolerances {
        positive(&mut out, &format!("tolerances.{key}"), Some(*v));
    }

    if let Some(n) = cfg.grid.n_nodes {
        if n < 16 {
            out.push(Violation::new("grid.n_nodes", format!("need at least 16 nodes, got {n}")));
        }
    }
    positive(&mut out, "params.mass", cfg.params.mass);
    positive(&mut out, "params.hbar", cfg.params.hbar);
    non_negative(&mut out, "params.osmotic_coupling", cfg.params.osmotic_coupling);
    if let Some(n) = cfg.ensemble.walkers {
        if n <= 0 {
            out.push(Violation::new("ensemble.walkers", format!("N must be positive, got {n}")));
        }
    }
    if let Some(k) = cfg.ensemble.snapshot_stride {
        if k <= 0 {
            out.push(Violation::new("ensemble.snapshot_stride", format!("must be positive, got {k}")));
        }
    }
    positive(&mut out, "ensemble.dt", cfg.ensemble.dt);
    positive(&mut out, "ensemble.t_final", cfg.ensemble.t_final);
    positive(&mut out, "oracle.dt", cfg.oracle.dt);
    if let Some(alphas) = &cfg.estimator.alphas {
        if alphas.is_empty() {
            out.push(Violation::new("estimator.alphas", "needs at least one weight"));
        }
        for a in alphas {
            if !(0.0..=1.0).contains(a) {
                out.push(Violation::new(
                    "estimator.alphas",
                    format!("α = {a} is outside [0, 1]: the weights satisfy α + β = 1 with α, β ≥ 0"),
                ));
            }
        }
    }
    if let Some(dts) = &cfg.estimator.dts {
        if dts.len() < 2 {
            out.push(Violation::new("estimator.dts", "a power-law fit needs at least two steps"));
        }
        for &dt in dts {
            positive(&mut out, "estimator.dts", Some(dt));
        }
    }
    if let Some(n) = cfg.estimator.n_times {
        if n < 3 {
            out.push(Violation::new("estimator.n_times", format!("paths need at least 3 times, got {n}")));
        }
    }
    if let Some(ws) = &cfg.circle.w {
        if ws.is_empty() {
            out.push(Violation::new("circle.w", "needs at least one winding velocity"));
        }
        if ws.iter().any(|w| !w.is_finite()) {
            out.push(Violation::new("circle.w", "must be finite"));
        }
    }
    out
}
