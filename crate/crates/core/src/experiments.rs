//! Sweep drivers behind the CLI: static-policy tradeoff, optimal policy map,
//! idle-probability sweep and simulation cross-checks. Each driver returns
//! typed rows; [`to_csv`] renders them with a fixed header.

use std::fmt::Write as _;

use thiserror::Error;

use crate::fmt_num;
use crate::model::{build_model, ModelConfig, ModelError};
use crate::par::{map_indexed, Execution};
use crate::policy::{Policy, PolicyError};
use crate::simulator::{simulate_with, SimConfig, SimError, SimReport};
use crate::solver::{
    best_static_policy_with, evaluate_policy, solve_rvi, two_channel_grid, SolveOptions,
    SolveResult, SolverError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid is empty")]
    Empty,
    #[error("cannot parse grid value `{0}`")]
    Parse(String),
    #[error("grid value {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("grid must be strictly increasing ({0} follows {1})")]
    NotIncreasing(f64, f64),
    #[error("grid step must be positive")]
    BadStep,
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("this sweep needs exactly 2 channels, the model has {0}")]
    NeedsTwoChannels(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// `p in {0, 0.05, ..., 1}`.
pub fn default_p_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// `eta_1 in {0.05, 0.10, ..., 0.95}`.
pub fn default_idle_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

pub fn validate_grid(values: &[f64]) -> Result<(), GridError> {
    if values.is_empty() {
        return Err(GridError::Empty);
    }
    if let Some(&v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(GridError::OutOfRange(v));
    }
    if let Some(w) = values.windows(2).find(|w| w[1] <= w[0]) {
        return Err(GridError::NotIncreasing(w[1], w[0]));
    }
    Ok(())
}

/// Parses `start:stop:step` (inclusive of `stop` up to rounding) or a comma
/// separated list. Range points are rounded to 12 decimals so `0:1:0.05`
/// yields exactly `i / 20`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, GridError> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| GridError::Parse(s.trim().to_string()))
    };
    let values = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(GridError::Parse(spec.to_string()));
        }
        let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0 && step.is_finite()) {
            return Err(GridError::BadStep);
        }
        let count = ((stop - start) / step + 1e-9).floor();
        if !(0.0..1e7).contains(&count) {
            return Err(GridError::Parse(spec.to_string()));
        }
        (0..=count as usize)
            .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
            .collect()
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    validate_grid(&values)?;
    Ok(values)
}

/// Fixed-header CSV rows.
pub trait CsvRow {
    const HEADER: &'static str;
    fn write_fields(&self, out: &mut String);
}

pub fn to_csv<R: CsvRow>(rows: &[R]) -> String {
    let mut out = String::from(R::HEADER);
    out.push('\n');
    for r in rows {
        r.write_fields(&mut out);
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticSweepRow {
    pub arrival_prob: f64,
    /// Probability of selecting channel 1 (index 0).
    pub p: f64,
    pub throughput: f64,
}

impl CsvRow for StaticSweepRow {
    const HEADER: &'static str = "arrival_prob,p,throughput";
    fn write_fields(&self, out: &mut String) {
        write!(
            out,
            "{},{},{}",
            fmt_num(self.arrival_prob),
            fmt_num(self.p),
            fmt_num(self.throughput)
        )
        .unwrap();
    }
}

fn require_two_channels(model: &ModelConfig) -> Result<(), ExperimentError> {
    match model.num_channels() {
        2 => Ok(()),
        n => Err(ExperimentError::NeedsTwoChannels(n)),
    }
}

/// Exact throughput of the static mix `(p, 1 - p)` for every arrival
/// probability and every `p`, arrival-major.
pub fn run_sweep_static(
    model: &ModelConfig,
    arrival_probs: &[f64],
    p_grid: &[f64],
    exec: Execution,
) -> Result<Vec<StaticSweepRow>, ExperimentError> {
    require_two_channels(model)?;
    validate_grid(p_grid)?;
    let models = arrival_probs
        .iter()
        .map(|&a| build_model(&model.with_arrival_prob(a)))
        .collect::<Result<Vec<_>, _>>()?;
    let points = arrival_probs.len() * p_grid.len();
    let gains = map_indexed(exec, points, |i| {
        let m = &models[i / p_grid.len()];
        let p = p_grid[i % p_grid.len()];
        let policy = Policy::static_mix(m.num_states(), &[p, 1.0 - p])?;
        Ok::<_, ExperimentError>(evaluate_policy(m, &policy)?)
    });
    gains
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            Ok(StaticSweepRow {
                arrival_prob: arrival_probs[i / p_grid.len()],
                p: p_grid[i % p_grid.len()],
                throughput: g?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMapRow {
    pub energy: u32,
    pub queue: u32,
    pub channel: usize,
    pub probs: Vec<f64>,
}

impl CsvRow for PolicyMapRow {
    // the per-channel columns are appended by `policy_map_csv`
    const HEADER: &'static str = "energy,queue,channel";
    fn write_fields(&self, out: &mut String) {
        write!(out, "{},{},{}", self.energy, self.queue, self.channel).unwrap();
        for &p in &self.probs {
            write!(out, ",{}", fmt_num(p)).unwrap();
        }
    }
}

/// Policy-map CSV including one `p_ch{a}` column per channel.
pub fn policy_map_csv(rows: &[PolicyMapRow]) -> String {
    let channels = rows.first().map_or(0, |r| r.probs.len());
    let mut out = String::from(PolicyMapRow::HEADER);
    for a in 0..channels {
        write!(out, ",p_ch{a}").unwrap();
    }
    out.push('\n');
    for r in rows {
        r.write_fields(&mut out);
        out.push('\n');
    }
    out
}

/// Solves the model and lists the selected channel in every state.
pub fn run_policy_map(
    model: &ModelConfig,
    opts: &SolveOptions,
) -> Result<(SolveResult, Vec<PolicyMapRow>), ExperimentError> {
    let m = build_model(model)?;
    let result = solve_rvi(&m, opts)?;
    let rows = (0..m.num_states())
        .map(|s| {
            let st = model.state_at(s);
            PolicyMapRow {
                energy: st.energy,
                queue: st.queue,
                channel: result.policy.action(s),
                probs: result.policy.row(s).to_vec(),
            }
        })
        .collect();
    Ok((result, rows))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdleSweepRow {
    pub idle_prob_1: f64,
    pub optimal_throughput: f64,
    pub best_static_throughput: f64,
    pub best_static_p: f64,
}

impl CsvRow for IdleSweepRow {
    const HEADER: &'static str =
        "idle_prob_1,optimal_throughput,best_static_throughput,best_static_p";
    fn write_fields(&self, out: &mut String) {
        write!(
            out,
            "{},{},{},{}",
            fmt_num(self.idle_prob_1),
            fmt_num(self.optimal_throughput),
            fmt_num(self.best_static_throughput),
            fmt_num(self.best_static_p)
        )
        .unwrap();
    }
}

/// For each idle probability of channel 1: optimal gain versus the best
/// static mix from `static_grid`.
pub fn run_sweep_idle(
    model: &ModelConfig,
    idle_grid: &[f64],
    static_grid: &[f64],
    opts: &SolveOptions,
    exec: Execution,
) -> Result<Vec<IdleSweepRow>, ExperimentError> {
    require_two_channels(model)?;
    validate_grid(idle_grid)?;
    validate_grid(static_grid)?;
    let mixes = two_channel_grid(static_grid);
    let rows = map_indexed(exec, idle_grid.len(), |i| {
        let eta = idle_grid[i];
        let mut ch = model.channels[0];
        ch.idle_prob = eta;
        let m = build_model(&model.with_channel(0, ch))?;
        let optimal = solve_rvi(&m, opts)?;
        let (best_static, mix) = best_static_policy_with(&m, &mixes, Execution::Sequential)?;
        Ok::<_, ExperimentError>(IdleSweepRow {
            idle_prob_1: eta,
            optimal_throughput: optimal.gain,
            best_static_throughput: best_static,
            best_static_p: mix[0],
        })
    });
    rows.into_iter().collect()
}

/// Simulation result plus the optional agreement check against the exact
/// gain of the simulated policy.
#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub report: SimReport,
    pub analytic_gain: Option<f64>,
    pub check_tolerance: Option<f64>,
}

impl SimulateOutcome {
    /// `None` when no check was requested.
    pub fn agreement(&self) -> Option<bool> {
        Some((self.report.throughput - self.analytic_gain?).abs() <= self.check_tolerance?)
    }
}

pub fn run_simulate(
    model: &ModelConfig,
    policy: &Policy,
    sim: &SimConfig,
    check_tolerance: Option<f64>,
    exec: Execution,
) -> Result<SimulateOutcome, ExperimentError> {
    let report = simulate_with(model, policy, sim, exec)?;
    let analytic_gain = match check_tolerance {
        Some(_) => Some(evaluate_policy(&build_model(model)?, policy)?),
        None => None,
    };
    Ok(SimulateOutcome {
        report,
        analytic_gain,
        check_tolerance,
    })
}
