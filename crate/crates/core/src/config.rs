//! Experiment configuration files (TOML).
//!
//! ```toml
//! queue_capacity = 10
//! energy_capacity = 10
//! tx_cost = 1
//! arrival_prob = 0.5
//!
//! [[channels]]
//! idle_prob = 0.1
//! tx_success_prob = 0.95
//! harvest_success_prob = 0.95
//!
//! [solver]        # optional: tolerance, max_iterations, damping
//! [sweep]         # optional: arrival_probs, p_grid, idle_grid
//! [sim]           # optional: slots, replications, seed, burn_in,
//!                 #           initial_energy, initial_queue
//! ```
//!
//! Grids are either arrays of numbers or `start:stop:step` strings.
//! Unknown keys are rejected rather than ignored.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;
use toml::{Table, Value};

use crate::experiments::{default_idle_grid, default_p_grid, parse_grid, GridError};
use crate::model::{ChannelParams, ModelConfig, ModelError, State};
use crate::simulator::SimConfig;
use crate::solver::SolveOptions;

/// The two-channel reference configuration shipped with the crate.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("`{key}` must be {expected}")]
    Type { key: String, expected: &'static str },
    #[error("unknown key `{0}`")]
    Unknown(String),
    #[error("`{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("`channels` must contain at least one channel")]
    EmptyChannels,
    #[error("`tx_cost` ({tx_cost}) must not exceed `energy_capacity` ({energy_capacity})")]
    TxCostExceedsCapacity { tx_cost: u32, energy_capacity: u32 },
    #[error("`{key}`: {source}")]
    Grid { key: String, source: GridError },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl ConfigError {
    /// The offending key, where there is one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Missing(k) | ConfigError::Unknown(k) => Some(k),
            ConfigError::Type { key, .. }
            | ConfigError::Invalid { key, .. }
            | ConfigError::Grid { key, .. } => Some(key),
            ConfigError::EmptyChannels => Some("channels"),
            ConfigError::TxCostExceedsCapacity { .. } => Some("tx_cost"),
            ConfigError::Model(ModelError::ProbabilityOutOfRange { key, .. }) => Some(key),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExperimentKind {
    #[default]
    Solve,
    Evaluate,
    Simulate,
    SweepStatic,
    SweepIdle,
    Oracle,
    PolicyMap,
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "solve" => Self::Solve,
            "evaluate" => Self::Evaluate,
            "simulate" => Self::Simulate,
            "sweep-static" => Self::SweepStatic,
            "sweep-idle" => Self::SweepIdle,
            "oracle" => Self::Oracle,
            "policy-map" => Self::PolicyMap,
            other => return Err(format!("unknown experiment kind `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub arrival_probs: Vec<f64>,
    /// Channel-1 selection probabilities for static policies.
    pub p_grid: Vec<f64>,
    /// Channel-1 idle probabilities.
    pub idle_grid: Vec<f64>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            arrival_probs: vec![0.2, 0.5],
            p_grid: default_p_grid(),
            idle_grid: default_idle_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub kind: ExperimentKind,
    pub solver: SolveOptions,
    pub sweep: SweepSettings,
    pub sim: SimConfig,
    pub out: Option<PathBuf>,
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

pub fn default_config() -> ExperimentConfig {
    parse_config_str(DEFAULT_CONFIG).expect("shipped config is valid")
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let root: Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    check_keys(
        &root,
        "",
        &[
            "queue_capacity",
            "energy_capacity",
            "tx_cost",
            "arrival_prob",
            "channels",
            "kind",
            "out",
            "solver",
            "sweep",
            "sim",
        ],
    )?;

    let model = parse_model(&root)?;

    let kind = match root.get("kind") {
        None => ExperimentKind::default(),
        Some(Value::String(s)) => s.parse().map_err(|message| ConfigError::Invalid {
            key: "kind".into(),
            message,
        })?,
        Some(_) => return Err(type_err("kind", "a string")),
    };
    let out = match root.get("out") {
        None => None,
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(_) => return Err(type_err("out", "a string")),
    };

    let mut solver = SolveOptions::default();
    if let Some(t) = section(&root, "solver")? {
        check_keys(t, "solver.", &["tolerance", "max_iterations", "damping"])?;
        if let Some(v) = opt_float(t, "solver.tolerance")? {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid("solver.tolerance", "must be positive"));
            }
            solver.tolerance = v;
        }
        if let Some(v) = opt_uint(t, "solver.max_iterations")? {
            solver.max_iterations = v as usize;
        }
        if let Some(v) = opt_float(t, "solver.damping")? {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid("solver.damping", "must lie in (0, 1]"));
            }
            solver.damping = v;
        }
    }

    let mut sweep = SweepSettings::default();
    if let Some(t) = section(&root, "sweep")? {
        check_keys(t, "sweep.", &["arrival_probs", "p_grid", "idle_grid"])?;
        if let Some(g) = opt_grid(t, "sweep.arrival_probs")? {
            sweep.arrival_probs = g;
        }
        if let Some(g) = opt_grid(t, "sweep.p_grid")? {
            sweep.p_grid = g;
        }
        if let Some(g) = opt_grid(t, "sweep.idle_grid")? {
            sweep.idle_grid = g;
        }
    }

    let mut sim = SimConfig::default();
    if let Some(t) = section(&root, "sim")? {
        check_keys(
            t,
            "sim.",
            &[
                "slots",
                "replications",
                "seed",
                "burn_in",
                "initial_energy",
                "initial_queue",
            ],
        )?;
        if let Some(v) = opt_uint(t, "sim.slots")? {
            if v == 0 {
                return Err(invalid("sim.slots", "must be at least 1"));
            }
            sim.slots = v;
        }
        if let Some(v) = opt_uint(t, "sim.replications")? {
            if v == 0 {
                return Err(invalid("sim.replications", "must be at least 1"));
            }
            sim.replications = v as usize;
        }
        if let Some(v) = opt_uint(t, "sim.seed")? {
            sim.seed = v;
        }
        if let Some(v) = opt_uint(t, "sim.burn_in")? {
            sim.burn_in = v;
        }
        let energy = opt_uint(t, "sim.initial_energy")?.unwrap_or(0);
        let queue = opt_uint(t, "sim.initial_queue")?.unwrap_or(0);
        if energy > model.energy_capacity as u64 {
            return Err(invalid("sim.initial_energy", "exceeds energy_capacity"));
        }
        if queue > model.queue_capacity as u64 {
            return Err(invalid("sim.initial_queue", "exceeds queue_capacity"));
        }
        sim.initial_state = State::new(energy as u32, queue as u32);
    }

    Ok(ExperimentConfig {
        model,
        kind,
        solver,
        sweep,
        sim,
        out,
    })
}

fn parse_model(root: &Table) -> Result<ModelConfig, ConfigError> {
    let queue_capacity = req_u32(root, "queue_capacity")?;
    let energy_capacity = req_u32(root, "energy_capacity")?;
    let tx_cost = req_u32(root, "tx_cost")?;
    let arrival_prob = req_prob(root, "arrival_prob", "arrival_prob")?;

    let list = match root.get("channels") {
        None => return Err(ConfigError::Missing("channels".into())),
        Some(Value::Array(a)) => a,
        Some(_) => return Err(type_err("channels", "an array of tables")),
    };
    if list.is_empty() {
        return Err(ConfigError::EmptyChannels);
    }
    let mut channels = Vec::with_capacity(list.len());
    for (i, entry) in list.iter().enumerate() {
        let prefix = format!("channels[{i}]");
        let t = entry
            .as_table()
            .ok_or_else(|| type_err(&prefix, "a table"))?;
        check_keys(
            t,
            &format!("{prefix}."),
            &["idle_prob", "tx_success_prob", "harvest_success_prob"],
        )?;
        channels.push(ChannelParams::new(
            req_prob(t, "idle_prob", &format!("{prefix}.idle_prob"))?,
            req_prob(t, "tx_success_prob", &format!("{prefix}.tx_success_prob"))?,
            req_prob(
                t,
                "harvest_success_prob",
                &format!("{prefix}.harvest_success_prob"),
            )?,
        ));
    }

    if tx_cost == 0 {
        return Err(invalid("tx_cost", "must be at least 1"));
    }
    if tx_cost > energy_capacity {
        return Err(ConfigError::TxCostExceedsCapacity {
            tx_cost,
            energy_capacity,
        });
    }
    let model = ModelConfig {
        channels,
        queue_capacity,
        energy_capacity,
        tx_cost,
        arrival_prob,
    };
    model.validate()?;
    Ok(model)
}

fn type_err(key: &str, expected: &'static str) -> ConfigError {
    ConfigError::Type {
        key: key.to_string(),
        expected,
    }
}

fn invalid(key: &str, message: &str) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.to_string(),
    }
}

fn check_keys(t: &Table, prefix: &str, allowed: &[&str]) -> Result<(), ConfigError> {
    match t.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(ConfigError::Unknown(format!("{prefix}{k}"))),
        None => Ok(()),
    }
}

fn section<'a>(root: &'a Table, key: &str) -> Result<Option<&'a Table>, ConfigError> {
    match root.get(key) {
        None => Ok(None),
        Some(Value::Table(t)) => Ok(Some(t)),
        Some(_) => Err(type_err(key, "a table")),
    }
}

fn leaf(full_key: &str) -> &str {
    full_key.rsplit('.').next().unwrap_or(full_key)
}

fn req_u32(t: &Table, key: &str) -> Result<u32, ConfigError> {
    match t.get(key) {
        None => Err(ConfigError::Missing(key.into())),
        Some(Value::Integer(i)) => {
            u32::try_from(*i).map_err(|_| invalid(key, "must be a non-negative integer"))
        }
        Some(_) => Err(type_err(key, "an integer")),
    }
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn req_prob(t: &Table, key: &str, full_key: &str) -> Result<f64, ConfigError> {
    let v = t
        .get(key)
        .ok_or_else(|| ConfigError::Missing(full_key.into()))?;
    let x = number(v).ok_or_else(|| type_err(full_key, "a number"))?;
    if !(0.0..=1.0).contains(&x) {
        return Err(ConfigError::Model(ModelError::ProbabilityOutOfRange {
            key: full_key.into(),
            value: x,
        }));
    }
    Ok(x)
}

fn opt_float(t: &Table, full_key: &str) -> Result<Option<f64>, ConfigError> {
    t.get(leaf(full_key))
        .map(|v| number(v).ok_or_else(|| type_err(full_key, "a number")))
        .transpose()
}

fn opt_uint(t: &Table, full_key: &str) -> Result<Option<u64>, ConfigError> {
    match t.get(leaf(full_key)) {
        None => Ok(None),
        Some(Value::Integer(i)) => u64::try_from(*i)
            .map(Some)
            .map_err(|_| invalid(full_key, "must be a non-negative integer")),
        Some(_) => Err(type_err(full_key, "an integer")),
    }
}

fn opt_grid(t: &Table, full_key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
    let grid_err = |source| ConfigError::Grid {
        key: full_key.to_string(),
        source,
    };
    match t.get(leaf(full_key)) {
        None => Ok(None),
        Some(Value::String(s)) => parse_grid(s).map(Some).map_err(grid_err),
        Some(Value::Array(a)) => {
            let values = a
                .iter()
                .map(|v| number(v).ok_or_else(|| type_err(full_key, "an array of numbers")))
                .collect::<Result<Vec<_>, _>>()?;
            crate::experiments::validate_grid(&values).map_err(grid_err)?;
            Ok(Some(values))
        }
        Some(_) => Err(type_err(full_key, "an array or a `start:stop:step` string")),
    }
}
