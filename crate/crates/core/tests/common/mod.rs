//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use proptest::prelude::*;
use rfcr::{ChannelParams, ModelConfig};

/// Dense successor row built by walking all 2x2x2 joint outcomes of
/// (idle, arrival, tx-or-harvest success) and applying the slot rules
/// directly. Keyed by (energy, queue).
pub fn brute_force_row(cfg: &ModelConfig, e: u32, q: u32, a: usize) -> BTreeMap<(u32, u32), f64> {
    let ch = cfg.channels[a];
    let mut row = BTreeMap::new();
    for idle in [true, false] {
        for arrival in [true, false] {
            for success in [true, false] {
                let p_idle = if idle { ch.idle_prob } else { 1.0 - ch.idle_prob };
                let p_arr = if arrival { cfg.arrival_prob } else { 1.0 - cfg.arrival_prob };
                let p_succ_given = if idle { ch.tx_success_prob } else { ch.harvest_success_prob };
                let p_succ = if success { p_succ_given } else { 1.0 - p_succ_given };
                let mut energy = e as i64;
                let mut queue = q as i64;
                if idle {
                    if e >= cfg.tx_cost && q > 0 {
                        energy -= cfg.tx_cost as i64;
                        if success {
                            queue -= 1;
                        }
                    }
                } else if success {
                    energy = (energy + 1).min(cfg.energy_capacity as i64);
                }
                if arrival {
                    queue = (queue + 1).min(cfg.queue_capacity as i64);
                }
                *row.entry((energy as u32, queue as u32)).or_insert(0.0) += p_idle * p_arr * p_succ;
            }
        }
    }
    row
}

pub fn prob() -> impl Strategy<Value = f64> {
    prop_oneof![
        1 => Just(0.0),
        1 => Just(1.0),
        8 => 0.0f64..=1.0,
    ]
}

pub fn channel() -> impl Strategy<Value = ChannelParams> {
    (prob(), prob(), prob()).prop_map(|(i, t, h)| ChannelParams::new(i, t, h))
}

/// Random valid configurations with small state spaces.
pub fn model_config() -> impl Strategy<Value = ModelConfig> {
    (
        proptest::collection::vec(channel(), 1..4),
        0u32..6,
        1u32..6,
        prob(),
    )
        .prop_flat_map(|(channels, q, e, alpha)| {
            (1..=e).prop_map(move |w| ModelConfig {
                channels: channels.clone(),
                queue_capacity: q,
                energy_capacity: e,
                tx_cost: w,
                arrival_prob: alpha,
            })
        })
}

/// The E = Q = 2 two-channel instance with the reference channel statistics.
pub fn small_reference() -> ModelConfig {
    ModelConfig {
        queue_capacity: 2,
        energy_capacity: 2,
        ..ModelConfig::reference()
    }
}
