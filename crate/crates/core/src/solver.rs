//! Average-reward optimisation over stationary channel-selection policies.
//!
//! [`solve_rvi`] runs relative value iteration on the damped kernel
//! `tau * P + (1 - tau) * I`, which leaves the optimal policies and the bias
//! unchanged, scales the gain by `tau`, and removes periodicity.
//! Fixed policies are evaluated exactly through their stationary
//! distribution, which also backs the brute-force oracle and the search over
//! state-independent (static) channel mixes.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use thiserror::Error;

use crate::model::{StateDistribution, TransitionModel};
use crate::par::{map_indexed, Execution};
use crate::policy::{Policy, PolicyError};

pub type StationaryDistribution = StateDistribution;

/// Bias is anchored at state index 0, i.e. (e = 0, q = 0).
pub const REFERENCE_STATE: usize = 0;

/// Candidate actions whose one-step value is within this margin of the best
/// are treated as tied; the lowest channel index wins.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Largest recurrent class solved with a dense LU factorisation; larger
/// classes use damped power iteration.
const DIRECT_SOLVE_LIMIT: usize = 2048;
const BALANCE_RESIDUAL_LIMIT: f64 = 1e-10;
const POWER_ITERATION_RESIDUAL: f64 = 1e-12;
const POWER_ITERATION_MAX: usize = 10_000_000;

pub const DEFAULT_ORACLE_BUDGET: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("tolerance must be positive and finite, got {0}")]
    InvalidTolerance(f64),
    #[error("damping must lie in (0, 1], got {0}")]
    InvalidDamping(f64),
    #[error("no convergence after {} iterations (span residual {:.3e})", .0.iterations, .0.span_residual)]
    NotConverged(Box<SolveResult>),
    #[error("policy induces {classes} closed recurrent classes; gain depends on the initial state")]
    Multichain { classes: usize },
    #[error("stationary distribution failed verification (balance residual {residual:.3e})")]
    Unverified { residual: f64 },
    #[error("policy covers {policy_states} states x {policy_actions} actions, model has {model_states} x {model_actions}")]
    PolicyShape {
        policy_states: usize,
        policy_actions: usize,
        model_states: usize,
        model_actions: usize,
    },
    #[error("enumerating {count} policies exceeds the budget of {budget}")]
    BudgetExceeded { count: String, budget: u64 },
    #[error("static grid is empty")]
    EmptyGrid,
    #[error("static grid entry {index}: {source}")]
    BadGridEntry { index: usize, source: PolicyError },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Stop once the span of successive value differences drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Weight on the Bellman operator in each update; 1 gives plain RVI.
    pub damping: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 1_000_000,
            damping: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    /// Long-run average throughput, packets per slot.
    pub gain: f64,
    /// Relative values, zero at [`REFERENCE_STATE`].
    pub bias: Vec<f64>,
    pub policy: Policy,
    pub iterations: usize,
    /// Span of the last value-update difference (damped scale).
    pub span_residual: f64,
}

/// Relative value iteration. Returns `NotConverged` carrying the last iterate
/// when the span criterion is not met within `max_iterations`.
pub fn solve_rvi(model: &TransitionModel, opts: &SolveOptions) -> Result<SolveResult, SolverError> {
    if !(opts.tolerance > 0.0 && opts.tolerance.is_finite()) {
        return Err(SolverError::InvalidTolerance(opts.tolerance));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(SolverError::InvalidDamping(opts.damping));
    }
    let tau = opts.damping;
    let n = model.num_states();
    let mut h = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut span = f64::INFINITY;
    let mut gain = 0.0;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in 0..n {
            let best = (0..model.num_actions())
                .map(|a| model.q_value(s, a, &h))
                .fold(f64::NEG_INFINITY, f64::max);
            next[s] = (1.0 - tau) * h[s] + tau * best;
            let diff = next[s] - h[s];
            lo = lo.min(diff);
            hi = hi.max(diff);
        }
        span = hi - lo;
        gain = 0.5 * (hi + lo) / tau;
        let anchor = next[REFERENCE_STATE];
        for (dst, src) in h.iter_mut().zip(&next) {
            *dst = src - anchor;
        }
        if span < opts.tolerance {
            break;
        }
    }

    let actions = greedy_actions(model, &h);
    let result = SolveResult {
        gain,
        bias: h,
        policy: Policy::deterministic(&actions, model.num_actions())
            .expect("greedy actions are in range"),
        iterations,
        span_residual: span,
    };
    if span < opts.tolerance {
        Ok(result)
    } else {
        Err(SolverError::NotConverged(Box::new(result)))
    }
}

/// Greedy deterministic actions for relative values `h`.
pub fn greedy_actions(model: &TransitionModel, h: &[f64]) -> Vec<usize> {
    (0..model.num_states())
        .map(|s| {
            let mut best_a = 0;
            let mut best_v = model.q_value(s, 0, h);
            for a in 1..model.num_actions() {
                let v = model.q_value(s, a, h);
                if v > best_v + TIE_TOLERANCE * best_v.abs().max(1.0) {
                    best_a = a;
                    best_v = v;
                }
            }
            best_a
        })
        .collect()
}

/// Largest |r + P h - h - g| over states under the actions of `policy`.
pub fn bellman_residual(model: &TransitionModel, policy: &Policy, gain: f64, h: &[f64]) -> f64 {
    (0..model.num_states())
        .map(|s| {
            let v: f64 = (0..model.num_actions())
                .map(|a| policy.prob(s, a) * model.q_value(s, a, h))
                .sum();
            (v - h[s] - gain).abs()
        })
        .fold(0.0, f64::max)
}

fn check_shape(model: &TransitionModel, policy: &Policy) -> Result<(), SolverError> {
    if policy.num_states() != model.num_states() || policy.num_actions() != model.num_actions() {
        return Err(SolverError::PolicyShape {
            policy_states: policy.num_states(),
            policy_actions: policy.num_actions(),
            model_states: model.num_states(),
            model_actions: model.num_actions(),
        });
    }
    Ok(())
}

/// Sparse rows of the Markov chain induced by `policy`.
fn policy_chain(model: &TransitionModel, policy: &Policy) -> Vec<Vec<(usize, f64)>> {
    (0..model.num_states())
        .map(|s| {
            let mut row: Vec<(usize, f64)> = Vec::new();
            for a in 0..model.num_actions() {
                let w = policy.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                for &(t, p) in model.successors(s, a) {
                    match row.iter_mut().find(|(u, _)| *u == t) {
                        Some(entry) => entry.1 += w * p,
                        None => row.push((t, w * p)),
                    }
                }
            }
            row.sort_by_key(|&(t, _)| t);
            row
        })
        .collect()
}

/// States of the single closed communicating class, or `Multichain`.
fn recurrent_class(chain: &[Vec<(usize, f64)>]) -> Result<Vec<usize>, SolverError> {
    let mut graph = DiGraph::<(), ()>::with_capacity(chain.len(), 0);
    let nodes: Vec<_> = (0..chain.len()).map(|_| graph.add_node(())).collect();
    for (s, row) in chain.iter().enumerate() {
        for &(t, p) in row {
            if p > 0.0 {
                graph.add_edge(nodes[s], nodes[t], ());
            }
        }
    }
    let mut component = vec![0usize; chain.len()];
    let sccs = tarjan_scc(&graph);
    for (c, members) in sccs.iter().enumerate() {
        for node in members {
            component[node.index()] = c;
        }
    }
    let closed: Vec<&Vec<_>> = sccs
        .iter()
        .enumerate()
        .filter(|(c, members)| {
            members.iter().all(|node| {
                chain[node.index()]
                    .iter()
                    .all(|&(t, p)| p == 0.0 || component[t] == *c)
            })
        })
        .map(|(_, members)| members)
        .collect();
    if closed.len() != 1 {
        return Err(SolverError::Multichain {
            classes: closed.len(),
        });
    }
    let mut class: Vec<usize> = closed[0].iter().map(|node| node.index()).collect();
    class.sort_unstable();
    Ok(class)
}

/// Unique stationary distribution of the chain induced by `policy`.
///
/// Transient states get exactly zero mass; the balance equations are solved
/// on the recurrent class only and the result is checked against the full
/// chain.
pub fn stationary_distribution(
    model: &TransitionModel,
    policy: &Policy,
) -> Result<StationaryDistribution, SolverError> {
    check_shape(model, policy)?;
    let chain = policy_chain(model, policy);
    let class = recurrent_class(&chain)?;
    let m = class.len();
    let mut local = vec![usize::MAX; chain.len()];
    for (i, &s) in class.iter().enumerate() {
        local[s] = i;
    }

    let mut mu_local = if m <= DIRECT_SOLVE_LIMIT {
        solve_balance_direct(&chain, &class, &local)
    } else {
        solve_balance_power(&chain, &class, &local)
    };
    for p in mu_local.iter_mut() {
        if *p < 0.0 {
            *p = 0.0;
        }
    }
    let total: f64 = mu_local.iter().sum();
    let mut mu = vec![0.0; chain.len()];
    for (i, &s) in class.iter().enumerate() {
        mu[s] = mu_local[i] / total;
    }

    let residual = balance_residual(&chain, &mu);
    if residual.is_nan() || residual > BALANCE_RESIDUAL_LIMIT {
        return Err(SolverError::Unverified { residual });
    }
    Ok(StateDistribution::new(model.config(), mu))
}

fn solve_balance_direct(chain: &[Vec<(usize, f64)>], class: &[usize], local: &[usize]) -> Vec<f64> {
    let m = class.len();
    // (P^T - I) mu = 0 with the last equation replaced by sum(mu) = 1
    let mut a = DMatrix::<f64>::zeros(m, m);
    for (i, &s) in class.iter().enumerate() {
        for &(t, p) in &chain[s] {
            a[(local[t], i)] += p;
        }
        a[(i, i)] -= 1.0;
    }
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(m);
    b[m - 1] = 1.0;
    match a.lu().solve(&b) {
        Some(x) => x.iter().copied().collect(),
        None => vec![f64::NAN; m],
    }
}

fn solve_balance_power(chain: &[Vec<(usize, f64)>], class: &[usize], local: &[usize]) -> Vec<f64> {
    let m = class.len();
    let mut mu = vec![1.0 / m as f64; m];
    let mut next = vec![0.0; m];
    for _ in 0..POWER_ITERATION_MAX {
        // lazy chain (P + I) / 2 has the same stationary distribution
        for (dst, src) in next.iter_mut().zip(&mu) {
            *dst = 0.5 * src;
        }
        for (i, &s) in class.iter().enumerate() {
            for &(t, p) in &chain[s] {
                next[local[t]] += 0.5 * mu[i] * p;
            }
        }
        let diff: f64 = next.iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut mu, &mut next);
        if diff < POWER_ITERATION_RESIDUAL {
            break;
        }
    }
    mu
}

/// `|| mu P - mu ||_1`.
fn balance_residual(chain: &[Vec<(usize, f64)>], mu: &[f64]) -> f64 {
    let mut flow = vec![0.0; mu.len()];
    for (s, row) in chain.iter().enumerate() {
        for &(t, p) in row {
            flow[t] += mu[s] * p;
        }
    }
    flow.iter().zip(mu).map(|(a, b)| (a - b).abs()).sum::<f64>()
        + (mu.iter().sum::<f64>() - 1.0).abs()
}

/// Exact long-run average throughput of a unichain policy.
pub fn evaluate_policy(model: &TransitionModel, policy: &Policy) -> Result<f64, SolverError> {
    let mu = stationary_distribution(model, policy)?;
    Ok(mu
        .probs()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0.0)
        .map(|(s, &m)| {
            m * (0..model.num_actions())
                .map(|a| policy.prob(s, a) * model.reward(s, a))
                .sum::<f64>()
        })
        .sum())
}

/// Number of deterministic stationary policies, if it fits in a u64.
pub fn deterministic_policy_count(model: &TransitionModel) -> Option<u64> {
    (model.num_actions() as u64).checked_pow(u32::try_from(model.num_states()).ok()?)
}

/// Decodes policy number `index`: the action of state `s` is digit `s` of
/// `index` written in base N, least significant digit first.
pub fn decode_policy(index: u64, num_states: usize, num_actions: usize) -> Vec<usize> {
    let base = num_actions as u64;
    let mut rest = index;
    (0..num_states)
        .map(|_| {
            let a = (rest % base) as usize;
            rest /= base;
            a
        })
        .collect()
}

/// Brute force over every deterministic stationary policy. Ties keep the
/// lowest policy number.
pub fn oracle_enumerate(
    model: &TransitionModel,
    budget: u64,
) -> Result<(f64, Policy), SolverError> {
    oracle_enumerate_with(model, budget, Execution::default())
}

pub fn oracle_enumerate_with(
    model: &TransitionModel,
    budget: u64,
    exec: Execution,
) -> Result<(f64, Policy), SolverError> {
    let count = match deterministic_policy_count(model) {
        Some(c) if c <= budget => c,
        Some(c) => {
            return Err(SolverError::BudgetExceeded {
                count: c.to_string(),
                budget,
            })
        }
        None => {
            return Err(SolverError::BudgetExceeded {
                count: format!("{}^{}", model.num_actions(), model.num_states()),
                budget,
            })
        }
    };
    let (n, k) = (model.num_states(), model.num_actions());
    let gains = map_indexed(exec, count as usize, |i| {
        let policy = Policy::deterministic(&decode_policy(i as u64, n, k), k)
            .expect("decoded actions are in range");
        evaluate_policy(model, &policy)
    });
    let mut best: Option<(usize, f64)> = None;
    for (i, g) in gains.into_iter().enumerate() {
        let g = g?;
        if best.is_none_or(|(_, b)| g > b) {
            best = Some((i, g));
        }
    }
    let (i, g) = best.expect("at least one policy");
    let policy = Policy::deterministic(&decode_policy(i as u64, n, k), k).unwrap();
    Ok((g, policy))
}

/// Best state-independent channel mix from `grid`; ties keep the first entry.
pub fn best_static_policy(
    model: &TransitionModel,
    grid: &[Vec<f64>],
) -> Result<(f64, Vec<f64>), SolverError> {
    best_static_policy_with(model, grid, Execution::default())
}

pub fn best_static_policy_with(
    model: &TransitionModel,
    grid: &[Vec<f64>],
    exec: Execution,
) -> Result<(f64, Vec<f64>), SolverError> {
    if grid.is_empty() {
        return Err(SolverError::EmptyGrid);
    }
    let policies = grid
        .iter()
        .enumerate()
        .map(|(index, mix)| {
            if mix.len() != model.num_actions() {
                return Err(SolverError::BadGridEntry {
                    index,
                    source: PolicyError::WrongActionCount {
                        row: 1,
                        expected: model.num_actions(),
                        got: mix.len(),
                    },
                });
            }
            Policy::static_mix(model.num_states(), mix)
                .map_err(|source| SolverError::BadGridEntry { index, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let gains = map_indexed(exec, policies.len(), |i| evaluate_policy(model, &policies[i]));
    let mut best: Option<(usize, f64)> = None;
    for (i, g) in gains.into_iter().enumerate() {
        let g = g?;
        if best.is_none_or(|(_, b)| g > b) {
            best = Some((i, g));
        }
    }
    let (i, g) = best.unwrap();
    Ok((g, grid[i].clone()))
}

/// Two-channel static grid `(p, 1 - p)` for each `p`.
pub fn two_channel_grid(ps: &[f64]) -> Vec<Vec<f64>> {
    ps.iter().map(|&p| vec![p, 1.0 - p]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ChannelParams, ModelConfig};

    fn small() -> ModelConfig {
        ModelConfig {
            queue_capacity: 2,
            energy_capacity: 2,
            ..ModelConfig::reference()
        }
    }

    #[test]
    fn rejects_bad_options() {
        let m = build_model(&small()).unwrap();
        let bad_tol = SolveOptions {
            tolerance: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            solve_rvi(&m, &bad_tol),
            Err(SolverError::InvalidTolerance(_))
        ));
        for damping in [0.0, 1.5, f64::NAN] {
            let opts = SolveOptions {
                damping,
                ..Default::default()
            };
            assert!(matches!(
                solve_rvi(&m, &opts),
                Err(SolverError::InvalidDamping(_))
            ));
        }
    }

    #[test]
    fn reports_non_convergence_with_residual() {
        let m = build_model(&ModelConfig::reference()).unwrap();
        let opts = SolveOptions {
            max_iterations: 3,
            ..Default::default()
        };
        match solve_rvi(&m, &opts) {
            Err(SolverError::NotConverged(r)) => {
                assert_eq!(r.iterations, 3);
                assert!(r.span_residual >= opts.tolerance);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn never_idle_gives_zero_gain() {
        let mut cfg = small();
        for ch in &mut cfg.channels {
            ch.idle_prob = 0.0;
        }
        let m = build_model(&cfg).unwrap();
        let r = solve_rvi(&m, &SolveOptions::default()).unwrap();
        assert_eq!(r.gain, 0.0);
        let p = Policy::static_mix(m.num_states(), &[0.5, 0.5]).unwrap();
        assert_eq!(evaluate_policy(&m, &p).unwrap(), 0.0);
    }

    #[test]
    fn always_idle_single_channel() {
        let cfg = ModelConfig {
            channels: vec![ChannelParams::new(1.0, 0.95, 0.95)],
            ..small()
        };
        let m = build_model(&cfg).unwrap();
        let r = solve_rvi(&m, &SolveOptions::default()).unwrap();
        assert!(r.gain.abs() < 1e-9, "gain {}", r.gain);
        let mu = stationary_distribution(&m, &r.policy).unwrap();
        let marginal = mu.energy_marginal();
        assert_eq!(marginal[0], 1.0);
        assert_eq!(evaluate_policy(&m, &r.policy).unwrap(), 0.0);
    }

    #[test]
    fn single_recurrent_state() {
        // E = 1, Q = 0 with an always-busy, always-harvesting channel:
        // everything drains into (1, 0)
        let cfg = ModelConfig {
            channels: vec![ChannelParams::new(0.0, 0.5, 1.0)],
            queue_capacity: 0,
            energy_capacity: 1,
            tx_cost: 1,
            arrival_prob: 0.5,
        };
        let m = build_model(&cfg).unwrap();
        let p = Policy::deterministic(&[0, 0], 1).unwrap();
        let mu = stationary_distribution(&m, &p).unwrap();
        assert_eq!(mu.probs(), &[0.0, 1.0]);
    }

    #[test]
    fn detects_multichain() {
        // nothing ever changes: every state is its own closed class
        let cfg = ModelConfig {
            channels: vec![ChannelParams::new(0.0, 0.5, 0.0)],
            queue_capacity: 1,
            energy_capacity: 1,
            tx_cost: 1,
            arrival_prob: 0.0,
        };
        let m = build_model(&cfg).unwrap();
        let p = Policy::deterministic(&[0; 4], 1).unwrap();
        assert_eq!(
            stationary_distribution(&m, &p),
            Err(SolverError::Multichain { classes: 4 })
        );
    }

    #[test]
    fn policy_shape_checked() {
        let m = build_model(&small()).unwrap();
        let p = Policy::deterministic(&[0; 3], 2).unwrap();
        assert!(matches!(
            evaluate_policy(&m, &p),
            Err(SolverError::PolicyShape { .. })
        ));
    }

    #[test]
    fn oracle_budget_and_decoding() {
        let m = build_model(&small()).unwrap();
        assert_eq!(deterministic_policy_count(&m), Some(512));
        assert!(matches!(
            oracle_enumerate(&m, 511),
            Err(SolverError::BudgetExceeded { .. })
        ));
        assert_eq!(decode_policy(0b101, 3, 2), vec![1, 0, 1]);
        assert_eq!(decode_policy(7, 2, 3), vec![1, 2]);
        let big = build_model(&ModelConfig::reference()).unwrap();
        assert!(matches!(
            oracle_enumerate(&big, DEFAULT_ORACLE_BUDGET),
            Err(SolverError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn static_grid_validation() {
        let m = build_model(&small()).unwrap();
        assert_eq!(best_static_policy(&m, &[]), Err(SolverError::EmptyGrid));
        assert!(matches!(
            best_static_policy(&m, &[vec![0.5, 0.4]]),
            Err(SolverError::BadGridEntry { index: 0, .. })
        ));
        assert!(matches!(
            best_static_policy(&m, &[vec![1.0]]),
            Err(SolverError::BadGridEntry { index: 0, .. })
        ));
    }

    #[test]
    fn static_on_never_idle_channel() {
        let cfg = small().with_channel(0, ChannelParams::new(0.0, 0.95, 0.95));
        let m = build_model(&cfg).unwrap();
        let (g, mix) = best_static_policy(&m, &[vec![1.0, 0.0]]).unwrap();
        assert_eq!(g, 0.0);
        assert_eq!(mix, vec![1.0, 0.0]);
    }

    #[test]
    fn identical_channels_tie_to_lowest_index() {
        let ch = ChannelParams::new(0.5, 0.9, 0.8);
        let cfg = ModelConfig {
            channels: vec![ch, ch, ch],
            ..small()
        };
        let m = build_model(&cfg).unwrap();
        let r = solve_rvi(&m, &SolveOptions::default()).unwrap();
        assert_eq!(r.policy.count_selecting(0), m.num_states());
    }
}
