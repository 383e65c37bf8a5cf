//! Plain-text run configuration: `[section]` headers followed by `key = value`
//! lines. `#` starts a comment. Keys outside any section belong to `run`.

use std::collections::BTreeMap;
use std::fmt;

use monotone_spde::{
    DiffusionCoefficient, DiffusionKind, EllipticOperator, Mesh, Model, MonotoneGraph, Regularization, SolverConfig,
    TruncationPolicy,
};
use sha2::{Digest, Sha256};

/// The configuration used when no `--config` is given.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.conf");

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> Result<T> {
    Err(ConfigError(msg.into()))
}

// (section, key, default); `None` marks a required key.
const SCHEMA: &[(&str, &str, Option<&str>)] = &[
    ("run", "seed", Some("0")),
    ("model", "graph", None),
    ("model", "n", None),
    ("model", "noise", None),
    ("model", "modes", Some("16")),
    ("model", "sigma", Some("1")),
    ("model", "decay", Some("1")),
    ("model", "offset", Some("0.5")),
    ("model", "diffusivity", Some("1")),
    ("solver", "T", None),
    ("solver", "steps", None),
    ("solver", "lambda", Some("h")),
    ("solver", "truncation", Some("adaptive")),
    ("solver", "cap", Some("10000")),
    ("solver", "newton_tol", Some("1e-10")),
    ("solver", "newton_max_iter", Some("50")),
    ("solver", "max_retries", Some("5")),
    ("experiment", "x0_mode", Some("1")),
    ("experiment", "x0_amplitude", Some("1")),
    ("experiment", "levels", Some("6")),
    ("experiment", "seeds", Some("10")),
    ("experiment", "p_list", Some("0.5,1,2,4")),
    ("experiment", "scales", Some("8,16,32")),
    ("experiment", "moment_samples", Some("200")),
    ("experiment", "datum_modes", Some("4")),
    ("experiment", "resamples", Some("400")),
    ("experiment", "lipschitz_p", Some("2")),
    ("experiment", "deltas", Some("1,0.1,0.01,0.001")),
    ("experiment", "lipschitz_samples", Some("500")),
    ("experiment", "meshes", Some("50,100,200")),
    ("experiment", "regularity_samples", Some("50")),
    ("experiment", "t_long", Some("100")),
    ("experiment", "long_steps", Some("10000")),
    ("experiment", "burn_in", Some("0.2")),
    ("experiment", "ladder", Some("1,2,4,8,16")),
    ("experiment", "block_time", Some("2")),
    ("experiment", "invariant_start", Some("0")),
];

/// Every schema key resolved to a string, defaults filled in.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawConfig {
    values: BTreeMap<(String, String), String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut section = "run".to_string();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !SCHEMA.iter().any(|(s, _, _)| *s == name) {
                    return err(format!("line {}: unknown section [{name}]", lineno + 1));
                }
                section = name.to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return err(format!("line {}: expected 'key = value', got '{line}'", lineno + 1));
            };
            let (key, value) = (key.trim(), value.trim());
            if !SCHEMA.iter().any(|(s, k, _)| *s == section && *k == key) {
                return err(format!("line {}: unknown key '{section}.{key}'", lineno + 1));
            }
            if values.insert((section.clone(), key.to_string()), value.to_string()).is_some() {
                return err(format!("line {}: duplicate key '{section}.{key}'", lineno + 1));
            }
        }
        for (s, k, default) in SCHEMA {
            let slot = (s.to_string(), k.to_string());
            if values.contains_key(&slot) {
                continue;
            }
            match default {
                Some(d) => {
                    values.insert(slot, d.to_string());
                }
                None => return err(format!("missing required key '{s}.{k}'")),
            }
        }
        Ok(Self { values })
    }

    pub fn set(&mut self, section: &str, key: &str, value: String) {
        self.values.insert((section.to_string(), key.to_string()), value);
    }

    fn get(&self, section: &str, key: &str) -> &str {
        &self.values[&(section.to_string(), key.to_string())]
    }

    fn parse_value<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<T> {
        let v = self.get(section, key);
        v.parse().map_err(|_| ConfigError(format!("bad value '{v}' for '{section}.{key}'")))
    }

    fn parse_list<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Vec<T>> {
        let v = self.get(section, key);
        v.split(',')
            .map(|x| x.trim().parse().map_err(|_| ConfigError(format!("bad list entry '{x}' in '{section}.{key}'"))))
            .collect()
    }

    /// One `section.key=value` line per key, sorted. Hashing this text
    /// identifies the run.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|((s, k), v)| format!("{s}.{k}={v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub graph: MonotoneGraph,
    pub n: usize,
    pub noise: String,
    pub modes: usize,
    pub sigma: f64,
    pub decay: f64,
    pub offset: f64,
    pub diffusivity: f64,
}

impl ModelSpec {
    /// The model on a mesh of `n` nodes; `modes` is capped at `n`.
    pub fn build(&self, n: usize) -> monotone_spde::Result<Model> {
        let mesh = Mesh::new(n)?;
        let k = self.modes.min(n);
        let diffusion = match self.noise.as_str() {
            "zero" => DiffusionCoefficient::zero(mesh, k),
            "additive" => DiffusionCoefficient::new(DiffusionKind::Additive, mesh, k, self.sigma, self.decay)?,
            "diagonal" => DiffusionCoefficient::new(
                DiffusionKind::DiagonalLinear { offset: self.offset },
                mesh,
                k,
                self.sigma,
                self.decay,
            )?,
            "locally_lipschitz" => {
                DiffusionCoefficient::new(DiffusionKind::LocallyLipschitz, mesh, k, self.sigma, self.decay)?
            }
            other => {
                return Err(monotone_spde::Error::Parse(format!(
                    "unknown noise kind '{other}' (expected zero, additive, diagonal, locally_lipschitz)"
                )))
            }
        };
        Model::new(EllipticOperator::with_diffusivity(mesh, self.diffusivity)?, self.graph, diffusion)
    }

    pub fn id(&self) -> String {
        format!("graph={};n={};noise={};modes={};sigma={};decay={}", self.graph, self.n, self.noise, self.modes, self.sigma, self.decay)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub x0_mode: usize,
    pub x0_amplitude: f64,
    pub levels: usize,
    pub seeds: u64,
    pub p_list: Vec<f64>,
    pub scales: Vec<f64>,
    pub moment_samples: usize,
    pub datum_modes: usize,
    pub resamples: usize,
    pub lipschitz_p: f64,
    pub deltas: Vec<f64>,
    pub lipschitz_samples: usize,
    pub meshes: Vec<usize>,
    pub regularity_samples: usize,
    pub t_long: f64,
    pub long_steps: usize,
    pub burn_in: f64,
    pub ladder: Vec<u32>,
    pub block_time: f64,
    pub invariant_start: f64,
}

/// A validated configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub raw: RawConfig,
    pub seed: u64,
    pub model: ModelSpec,
    pub t_end: f64,
    pub steps: usize,
    pub solver: SolverConfig,
    pub experiment: ExperimentSpec,
}

impl RunConfig {
    pub fn from_text(text: &str, seed_override: Option<u64>) -> Result<Self> {
        let mut raw = RawConfig::parse(text)?;
        if let Some(seed) = seed_override {
            raw.set("run", "seed", seed.to_string());
        }
        Self::resolve(raw)
    }

    fn resolve(raw: RawConfig) -> Result<Self> {
        let graph_id = raw.get("model", "graph");
        let graph: MonotoneGraph = graph_id.parse().map_err(|e| ConfigError(format!("'model.graph': {e}")))?;
        let model = ModelSpec {
            graph,
            n: raw.parse_value("model", "n")?,
            noise: raw.get("model", "noise").to_string(),
            modes: raw.parse_value("model", "modes")?,
            sigma: raw.parse_value("model", "sigma")?,
            decay: raw.parse_value("model", "decay")?,
            offset: raw.parse_value("model", "offset")?,
            diffusivity: raw.parse_value("model", "diffusivity")?,
        };
        let t_end: f64 = raw.parse_value("solver", "T")?;
        let steps: usize = raw.parse_value("solver", "steps")?;
        if !(t_end > 0.0 && t_end.is_finite()) || steps == 0 {
            return err("'solver.T' must be positive and 'solver.steps' at least 1");
        }
        let regularization = match raw.get("solver", "lambda") {
            "h" => Regularization::StepSize,
            _ => Regularization::Fixed(raw.parse_value("solver", "lambda")?),
        };
        let truncation = match raw.get("solver", "truncation") {
            "adaptive" => TruncationPolicy::Adaptive { start: 1, cap: raw.parse_value("solver", "cap")? },
            _ => TruncationPolicy::Fixed(raw.parse_value("solver", "truncation")?),
        };
        let solver = SolverConfig {
            regularization,
            newton_tol: raw.parse_value("solver", "newton_tol")?,
            newton_max_iter: raw.parse_value("solver", "newton_max_iter")?,
            max_retries: raw.parse_value("solver", "max_retries")?,
            truncation,
        };
        solver.validate(t_end / steps as f64).map_err(|e| ConfigError(format!("solver block: {e}")))?;
        model.build(model.n).map_err(|e| ConfigError(format!("model block: {e}")))?;

        let experiment = ExperimentSpec {
            x0_mode: raw.parse_value("experiment", "x0_mode")?,
            x0_amplitude: raw.parse_value("experiment", "x0_amplitude")?,
            levels: raw.parse_value("experiment", "levels")?,
            seeds: raw.parse_value("experiment", "seeds")?,
            p_list: raw.parse_list("experiment", "p_list")?,
            scales: raw.parse_list("experiment", "scales")?,
            moment_samples: raw.parse_value("experiment", "moment_samples")?,
            datum_modes: raw.parse_value("experiment", "datum_modes")?,
            resamples: raw.parse_value("experiment", "resamples")?,
            lipschitz_p: raw.parse_value("experiment", "lipschitz_p")?,
            deltas: raw.parse_list("experiment", "deltas")?,
            lipschitz_samples: raw.parse_value("experiment", "lipschitz_samples")?,
            meshes: raw.parse_list("experiment", "meshes")?,
            regularity_samples: raw.parse_value("experiment", "regularity_samples")?,
            t_long: raw.parse_value("experiment", "t_long")?,
            long_steps: raw.parse_value("experiment", "long_steps")?,
            burn_in: raw.parse_value("experiment", "burn_in")?,
            ladder: raw.parse_list("experiment", "ladder")?,
            block_time: raw.parse_value("experiment", "block_time")?,
            invariant_start: raw.parse_value("experiment", "invariant_start")?,
        };
        if experiment.x0_mode == 0 || experiment.x0_mode > model.n {
            return err(format!("'experiment.x0_mode' must lie in 1..={}", model.n));
        }
        Ok(Self { seed: raw.parse_value("run", "seed")?, raw, model, t_end, steps, solver, experiment })
    }

    pub fn hash(&self) -> String {
        self.raw.hash()
    }
}
