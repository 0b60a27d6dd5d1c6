//! Seeded slot-by-slot Monte Carlo of the queue/energy process.
//!
//! Replication `r` draws from `ChaCha8Rng::seed_from_u64(seed)` switched to
//! stream `r`, so every replication is an independent, reproducible stream.
//! Per slot the draws happen in a fixed order: action, idle/busy, transmit
//! or harvest outcome, arrival.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{ModelConfig, ModelError, State, StateDistribution};
use crate::par::{map_indexed, Execution};
use crate::policy::Policy;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("slots must be at least 1")]
    NoSlots,
    #[error("replications must be at least 1")]
    NoReplications,
    #[error("initial state {0} is outside the state space")]
    BadInitialState(State),
    #[error("policy covers {states} states x {actions} actions, model has {model_states} x {model_actions}")]
    PolicyShape {
        states: usize,
        actions: usize,
        model_states: usize,
        model_actions: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Measured slots per replication.
    pub slots: u64,
    pub seed: u64,
    pub initial_state: State,
    pub replications: usize,
    /// Slots simulated before measurement starts; not counted anywhere.
    pub burn_in: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            slots: 1_000_000,
            seed: 1,
            initial_state: State::new(0, 0),
            replications: 10,
            burn_in: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimCounters {
    pub tx_attempts: u64,
    pub tx_successes: u64,
    pub harvest_attempts: u64,
    pub harvest_successes: u64,
    /// Arrivals lost to a full queue.
    pub packets_dropped: u64,
    /// Harvested units lost to a full storage.
    pub harvest_discarded: u64,
}

impl SimCounters {
    fn add(&mut self, other: &SimCounters) {
        self.tx_attempts += other.tx_attempts;
        self.tx_successes += other.tx_successes;
        self.harvest_attempts += other.harvest_attempts;
        self.harvest_successes += other.harvest_successes;
        self.packets_dropped += other.packets_dropped;
        self.harvest_discarded += other.harvest_discarded;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub slots: u64,
    pub replications: usize,
    pub seed: u64,
    /// Successful transmissions per measured slot, pooled over replications.
    pub throughput: f64,
    pub per_replication: Vec<f64>,
    /// Standard error of the replication mean; 0 for a single replication.
    pub std_error: f64,
    pub counters: SimCounters,
    visits: StateDistribution,
}

struct Replication {
    counters: SimCounters,
    visits: Vec<u64>,
}

pub fn simulate(config: &ModelConfig, policy: &Policy, sim: &SimConfig) -> Result<SimReport, SimError> {
    simulate_with(config, policy, sim, Execution::default())
}

pub fn simulate_with(
    config: &ModelConfig,
    policy: &Policy,
    sim: &SimConfig,
    exec: Execution,
) -> Result<SimReport, SimError> {
    config.validate()?;
    if sim.slots == 0 {
        return Err(SimError::NoSlots);
    }
    if sim.replications == 0 {
        return Err(SimError::NoReplications);
    }
    if !config.contains(sim.initial_state) {
        return Err(SimError::BadInitialState(sim.initial_state));
    }
    if policy.num_states() != config.num_states() || policy.num_actions() != config.num_channels() {
        return Err(SimError::PolicyShape {
            states: policy.num_states(),
            actions: policy.num_actions(),
            model_states: config.num_states(),
            model_actions: config.num_channels(),
        });
    }

    let reps = map_indexed(exec, sim.replications, |r| {
        run_replication(config, policy, sim, r as u64)
    });

    let mut counters = SimCounters::default();
    let mut visits = vec![0u64; config.num_states()];
    let mut per_replication = Vec::with_capacity(reps.len());
    for rep in &reps {
        counters.add(&rep.counters);
        for (v, c) in visits.iter_mut().zip(&rep.visits) {
            *v += c;
        }
        per_replication.push(rep.counters.tx_successes as f64 / sim.slots as f64);
    }
    let total_slots = sim.slots as f64 * sim.replications as f64;
    let throughput = counters.tx_successes as f64 / total_slots;
    let std_error = if per_replication.len() > 1 {
        let k = per_replication.len() as f64;
        let mean = per_replication.iter().sum::<f64>() / k;
        let var = per_replication
            .iter()
            .map(|x| (x - mean).powi(2))
            .sum::<f64>()
            / (k - 1.0);
        (var / k).sqrt()
    } else {
        0.0
    };
    let visits = StateDistribution::new(
        config,
        visits.iter().map(|&c| c as f64 / total_slots).collect(),
    );

    Ok(SimReport {
        slots: sim.slots,
        replications: sim.replications,
        seed: sim.seed,
        throughput,
        per_replication,
        std_error,
        counters,
        visits,
    })
}

fn sample_action<R: Rng>(rng: &mut R, row: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (a, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = a;
            if u < acc {
                return a;
            }
        }
    }
    last
}

fn run_replication(config: &ModelConfig, policy: &Policy, sim: &SimConfig, r: u64) -> Replication {
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    rng.set_stream(r);
    let mut counters = SimCounters::default();
    let mut visits = vec![0u64; config.num_states()];
    let mut scratch = SimCounters::default();
    let (cap_e, cap_q, cost) = (config.energy_capacity, config.queue_capacity, config.tx_cost);
    let alpha = config.arrival_prob;
    let mut e = sim.initial_state.energy;
    let mut q = sim.initial_state.queue;

    for t in 0..sim.burn_in + sim.slots {
        let measuring = t >= sim.burn_in;
        let c = if measuring { &mut counters } else { &mut scratch };
        let s = e as usize * (cap_q as usize + 1) + q as usize;
        if measuring {
            visits[s] += 1;
        }
        let ch = &config.channels[sample_action(&mut rng, policy.row(s))];
        if rng.random_bool(ch.idle_prob) {
            if e >= cost && q >= 1 {
                c.tx_attempts += 1;
                e -= cost;
                if rng.random_bool(ch.tx_success_prob) {
                    q -= 1;
                    c.tx_successes += 1;
                }
            }
        } else {
            c.harvest_attempts += 1;
            if rng.random_bool(ch.harvest_success_prob) {
                c.harvest_successes += 1;
                if e < cap_e {
                    e += 1;
                } else {
                    c.harvest_discarded += 1;
                }
            }
        }
        if rng.random_bool(alpha) {
            if q < cap_q {
                q += 1;
            } else {
                c.packets_dropped += 1;
            }
        }
    }
    Replication { counters, visits }
}

/// Empirical state occupancy over the measured slots of all replications.
pub fn visit_frequencies(report: &SimReport) -> &StateDistribution {
    &report.visits
}

impl SimReport {
    pub const CSV_HEADER: &'static str =
        "slots,replications,seed,throughput,stderr,attempts,successes,drops,discards";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.slots,
            self.replications,
            self.seed,
            crate::fmt_num(self.throughput),
            crate::fmt_num(self.std_error),
            self.counters.tx_attempts,
            self.counters.tx_successes,
            self.counters.packets_dropped,
            self.counters.harvest_discarded,
        )
    }

    /// `key = value` lines.
    pub fn to_key_values(&self) -> String {
        let c = &self.counters;
        let mut out = String::new();
        let pairs: [(&str, String); 13] = [
            ("slots", self.slots.to_string()),
            ("replications", self.replications.to_string()),
            ("seed", self.seed.to_string()),
            ("throughput", crate::fmt_num(self.throughput)),
            ("stderr", crate::fmt_num(self.std_error)),
            ("tx_attempts", c.tx_attempts.to_string()),
            ("tx_successes", c.tx_successes.to_string()),
            ("harvest_attempts", c.harvest_attempts.to_string()),
            ("harvest_successes", c.harvest_successes.to_string()),
            ("packets_dropped", c.packets_dropped.to_string()),
            ("harvest_discarded", c.harvest_discarded.to_string()),
            (
                "per_replication",
                self.per_replication
                    .iter()
                    .map(|&x| crate::fmt_num(x))
                    .collect::<Vec<_>>()
                    .join(";"),
            ),
            ("visited_states", self.visits.probs().iter().filter(|&&p| p > 0.0).count().to_string()),
        ];
        for (k, v) in pairs {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }
}
