//! Slot-level model of a secondary user that picks one channel per slot,
//! transmits when the channel is idle and harvests RF energy when it is busy.
//!
//! The state is the pair (energy level, queue length). Within a slot the
//! events are resolved in a fixed order: the selected channel is sensed,
//! then either a transmission (idle) or a harvest (busy) takes place, and
//! finally a packet may arrive. A departing packet frees its buffer slot
//! before the arrival is admitted; anything beyond the capacities is lost.

use std::fmt;

use thiserror::Error;

/// Tolerance used when checking that a probability vector sums to one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("channel list is empty")]
    NoChannels,
    #[error("`{key}` must lie in [0, 1], got {value}")]
    ProbabilityOutOfRange { key: String, value: f64 },
    #[error("`tx_cost` must be at least 1")]
    ZeroTxCost,
    #[error("`tx_cost` ({tx_cost}) exceeds `energy_capacity` ({energy_capacity})")]
    TxCostExceedsCapacity { tx_cost: u32, energy_capacity: u32 },
    #[error("state {0} is outside the state space")]
    InvalidState(State),
    #[error("action {action} is invalid for a model with {channels} channel(s)")]
    InvalidAction { action: usize, channels: usize },
}

/// Per-channel statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    /// Probability that the channel is idle in a slot.
    pub idle_prob: f64,
    /// Probability that a transmission on an idle slot is received.
    pub tx_success_prob: f64,
    /// Probability that one unit of energy is harvested on a busy slot.
    pub harvest_success_prob: f64,
}

impl ChannelParams {
    pub fn new(idle_prob: f64, tx_success_prob: f64, harvest_success_prob: f64) -> Self {
        Self {
            idle_prob,
            tx_success_prob,
            harvest_success_prob,
        }
    }

    fn validate(&self, index: usize) -> Result<(), ModelError> {
        check_prob(&format!("channels[{index}].idle_prob"), self.idle_prob)?;
        check_prob(
            &format!("channels[{index}].tx_success_prob"),
            self.tx_success_prob,
        )?;
        check_prob(
            &format!("channels[{index}].harvest_success_prob"),
            self.harvest_success_prob,
        )
    }
}

pub(crate) fn check_prob(key: &str, value: f64) -> Result<(), ModelError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ModelError::ProbabilityOutOfRange {
            key: key.to_string(),
            value,
        })
    }
}

/// Global model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub channels: Vec<ChannelParams>,
    /// Data queue capacity in packets.
    pub queue_capacity: u32,
    /// Energy storage capacity in units.
    pub energy_capacity: u32,
    /// Energy units spent on every transmission attempt.
    pub tx_cost: u32,
    /// Per-slot packet arrival probability.
    pub arrival_prob: f64,
}

impl ModelConfig {
    /// Two-channel reference setup: Q = E = 10, W = 1, arrival 0.5,
    /// a mostly-busy channel (0.1, 0.95, 0.95) and a mostly-idle channel
    /// (0.9, 0.95, 0.70).
    pub fn reference() -> Self {
        Self {
            channels: vec![
                ChannelParams::new(0.1, 0.95, 0.95),
                ChannelParams::new(0.9, 0.95, 0.70),
            ],
            queue_capacity: 10,
            energy_capacity: 10,
            tx_cost: 1,
            arrival_prob: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.channels.is_empty() {
            return Err(ModelError::NoChannels);
        }
        for (i, ch) in self.channels.iter().enumerate() {
            ch.validate(i)?;
        }
        if self.tx_cost == 0 {
            return Err(ModelError::ZeroTxCost);
        }
        if self.tx_cost > self.energy_capacity {
            return Err(ModelError::TxCostExceedsCapacity {
                tx_cost: self.tx_cost,
                energy_capacity: self.energy_capacity,
            });
        }
        check_prob("arrival_prob", self.arrival_prob)
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn num_states(&self) -> usize {
        (self.energy_capacity as usize + 1) * (self.queue_capacity as usize + 1)
    }

    /// Energy-major, queue-minor index of `s`.
    pub fn state_index(&self, s: State) -> usize {
        s.energy as usize * (self.queue_capacity as usize + 1) + s.queue as usize
    }

    pub fn state_at(&self, index: usize) -> State {
        let stride = self.queue_capacity as usize + 1;
        State::new((index / stride) as u32, (index % stride) as u32)
    }

    pub fn contains(&self, s: State) -> bool {
        s.energy <= self.energy_capacity && s.queue <= self.queue_capacity
    }

    fn check_state_action(&self, s: State, a: Action) -> Result<(), ModelError> {
        if !self.contains(s) {
            return Err(ModelError::InvalidState(s));
        }
        if a.0 >= self.channels.len() {
            return Err(ModelError::InvalidAction {
                action: a.0,
                channels: self.channels.len(),
            });
        }
        Ok(())
    }

    /// Whether a transmission is attempted in `s` when the channel is idle.
    pub fn can_transmit(&self, s: State) -> bool {
        s.energy >= self.tx_cost && s.queue > 0
    }

    /// Copy of this configuration with channel `index` replaced.
    pub fn with_channel(&self, index: usize, channel: ChannelParams) -> Self {
        let mut out = self.clone();
        out.channels[index] = channel;
        out
    }

    pub fn with_arrival_prob(&self, arrival_prob: f64) -> Self {
        Self {
            arrival_prob,
            ..self.clone()
        }
    }
}

/// Combined (energy level, queue length) state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State {
    pub energy: u32,
    pub queue: u32,
}

impl State {
    pub const fn new(energy: u32, queue: u32) -> Self {
        Self { energy, queue }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(e={}, q={})", self.energy, self.queue)
    }
}

/// Index of the channel selected in a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action(pub usize);

/// All states in index order.
pub fn enumerate_states(config: &ModelConfig) -> Vec<State> {
    (0..=config.energy_capacity)
        .flat_map(|e| (0..=config.queue_capacity).map(move |q| State::new(e, q)))
        .collect()
}

/// Exact one-slot successor distribution of `s` under action `a`, sorted by
/// successor index. Coinciding outcomes are merged and zero-probability
/// outcomes are dropped.
pub fn successor_distribution(
    config: &ModelConfig,
    s: State,
    a: Action,
) -> Result<Vec<(State, f64)>, ModelError> {
    config.check_state_action(s, a)?;
    Ok(successors_unchecked(config, s, a))
}

fn successors_unchecked(config: &ModelConfig, s: State, a: Action) -> Vec<(State, f64)> {
    let ch = &config.channels[a.0];
    let alpha = config.arrival_prob;
    let (cap_e, cap_q) = (config.energy_capacity, config.queue_capacity);

    // (energy, queue before arrival, probability)
    let mut pre: Vec<(u32, u32, f64)> = Vec::with_capacity(4);
    if config.can_transmit(s) {
        let e = s.energy - config.tx_cost;
        pre.push((e, s.queue - 1, ch.idle_prob * ch.tx_success_prob));
        pre.push((e, s.queue, ch.idle_prob * (1.0 - ch.tx_success_prob)));
    } else {
        pre.push((s.energy, s.queue, ch.idle_prob));
    }
    let busy = 1.0 - ch.idle_prob;
    pre.push((
        (s.energy + 1).min(cap_e),
        s.queue,
        busy * ch.harvest_success_prob,
    ));
    pre.push((s.energy, s.queue, busy * (1.0 - ch.harvest_success_prob)));

    let mut out: Vec<(State, f64)> = Vec::with_capacity(8);
    for (e, q, p) in pre {
        for (q_next, p_arr) in [((q + 1).min(cap_q), alpha), (q, 1.0 - alpha)] {
            let prob = p * p_arr;
            if prob > 0.0 {
                out.push((State::new(e, q_next), prob));
            }
        }
    }
    out.sort_by_key(|(st, _)| config.state_index(*st));
    out.dedup_by(|next, kept| {
        if next.0 == kept.0 {
            // summing rounded terms can overshoot 1 by an ulp
            kept.1 = (kept.1 + next.1).min(1.0);
            true
        } else {
            false
        }
    });
    out
}

/// Expected packets delivered in one slot.
pub fn immediate_reward(config: &ModelConfig, s: State, a: Action) -> f64 {
    match config.channels.get(a.0) {
        Some(ch) if config.can_transmit(s) => ch.idle_prob * ch.tx_success_prob,
        _ => 0.0,
    }
}

/// Sparse transition kernel and rewards for every (state, action) pair.
#[derive(Debug, Clone)]
pub struct TransitionModel {
    config: ModelConfig,
    num_states: usize,
    num_actions: usize,
    rows: Vec<Vec<(usize, f64)>>,
    rewards: Vec<f64>,
}

/// Builds the full kernel for a validated configuration.
pub fn build_model(config: &ModelConfig) -> Result<TransitionModel, ModelError> {
    config.validate()?;
    let num_states = config.num_states();
    let num_actions = config.num_channels();
    let mut rows = Vec::with_capacity(num_states * num_actions);
    let mut rewards = Vec::with_capacity(num_states * num_actions);
    for s in enumerate_states(config) {
        for a in (0..num_actions).map(Action) {
            rows.push(
                successors_unchecked(config, s, a)
                    .into_iter()
                    .map(|(st, p)| (config.state_index(st), p))
                    .collect(),
            );
            rewards.push(immediate_reward(config, s, a));
        }
    }
    Ok(TransitionModel {
        config: config.clone(),
        num_states,
        num_actions,
        rows,
        rewards,
    })
}

impl TransitionModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Successor indices and probabilities for state index `s`, action `a`.
    #[inline]
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.rows[s * self.num_actions + a]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.num_actions + a]
    }

    /// `reward(s, a) + sum_{s'} p(s' | s, a) * values[s']`.
    #[inline]
    pub fn q_value(&self, s: usize, a: usize, values: &[f64]) -> f64 {
        self.reward(s, a)
            + self
                .successors(s, a)
                .iter()
                .map(|&(t, p)| p * values[t])
                .sum::<f64>()
    }

    pub fn max_reward(&self) -> f64 {
        self.rewards.iter().copied().fold(0.0, f64::max)
    }
}

/// Probability mass over the state space, indexed by state index.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution {
    energy_capacity: u32,
    queue_capacity: u32,
    probs: Vec<f64>,
}

impl StateDistribution {
    pub(crate) fn new(config: &ModelConfig, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), config.num_states());
        Self {
            energy_capacity: config.energy_capacity,
            queue_capacity: config.queue_capacity,
            probs,
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, s: State) -> f64 {
        if s.energy > self.energy_capacity || s.queue > self.queue_capacity {
            return 0.0;
        }
        self.probs[s.energy as usize * (self.queue_capacity as usize + 1) + s.queue as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (State, f64)> + '_ {
        let stride = self.queue_capacity as usize + 1;
        self.probs
            .iter()
            .enumerate()
            .map(move |(i, &p)| (State::new((i / stride) as u32, (i % stride) as u32), p))
    }

    /// Marginal distribution of the energy level.
    pub fn energy_marginal(&self) -> Vec<f64> {
        let stride = self.queue_capacity as usize + 1;
        self.probs.chunks(stride).map(|c| c.iter().sum()).collect()
    }

    /// Total-variation distance; both distributions must share a state space.
    pub fn total_variation(&self, other: &StateDistribution) -> f64 {
        assert_eq!(self.probs.len(), other.probs.len(), "state spaces differ");
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}
