//! Stationary channel-selection policies and their CSV file format.
//!
//! File layout: header `energy,queue,p_ch0,p_ch1,...`, then one row per state
//! in state-index order (energy-major, queue-minor).

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{ModelConfig, State, ROW_SUM_TOLERANCE};

/// Row-sum tolerance for policies read from text, where probabilities have
/// been rounded to a finite number of digits.
pub const FILE_ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("policy has {got} rows, expected {expected}")]
    WrongStateCount { expected: usize, got: usize },
    #[error("row {row}: expected {expected} channel probabilities, got {got}")]
    WrongActionCount {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("row {row}: probabilities sum to {sum}, expected 1")]
    BadRowSum { row: usize, sum: f64 },
    #[error("row {row}: probability {value} outside [0, 1]")]
    BadProbability { row: usize, value: f64 },
    #[error("row {row}: expected state {expected}, found ({energy}, {queue})")]
    StateMismatch {
        row: usize,
        expected: State,
        energy: String,
        queue: String,
    },
    #[error("row {row}: cannot parse `{field}`")]
    Parse { row: usize, field: String },
    #[error("bad header `{0}`")]
    BadHeader(String),
    #[error("action {action} out of range for {channels} channel(s)")]
    BadAction { action: usize, channels: usize },
}

/// Per-state distribution over channels, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    num_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    /// Builds a policy from per-state rows; rows are numbered from 1 in errors.
    pub fn from_rows(rows: Vec<Vec<f64>>, num_actions: usize) -> Result<Self, PolicyError> {
        Self::from_rows_with_tolerance(rows, num_actions, ROW_SUM_TOLERANCE)
    }

    fn from_rows_with_tolerance(
        rows: Vec<Vec<f64>>,
        num_actions: usize,
        tol: f64,
    ) -> Result<Self, PolicyError> {
        let mut probs = Vec::with_capacity(rows.len() * num_actions);
        for (i, row) in rows.into_iter().enumerate() {
            let row_no = i + 1;
            if row.len() != num_actions {
                return Err(PolicyError::WrongActionCount {
                    row: row_no,
                    expected: num_actions,
                    got: row.len(),
                });
            }
            if let Some(&value) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(PolicyError::BadProbability { row: row_no, value });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(PolicyError::BadRowSum { row: row_no, sum });
            }
            probs.extend(row.iter().map(|p| p / sum));
        }
        Ok(Self { num_actions, probs })
    }

    pub fn deterministic(actions: &[usize], num_actions: usize) -> Result<Self, PolicyError> {
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(PolicyError::BadAction {
                    action: a,
                    channels: num_actions,
                });
            }
            probs[s * num_actions + a] = 1.0;
        }
        Ok(Self { num_actions, probs })
    }

    /// State-independent policy that uses the same channel mix everywhere.
    pub fn static_mix(num_states: usize, mix: &[f64]) -> Result<Self, PolicyError> {
        Self::from_rows(vec![mix.to_vec(); num_states], mix.len())
    }

    pub fn num_states(&self) -> usize {
        self.probs.len() / self.num_actions
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn is_deterministic(&self) -> bool {
        self.probs.iter().all(|&p| p == 0.0 || p == 1.0)
    }

    /// Most likely channel in state `s`; ties go to the lowest index.
    pub fn action(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for (a, &p) in row.iter().enumerate().skip(1) {
            if p > row[best] {
                best = a;
            }
        }
        best
    }

    /// Number of states whose most likely channel is `a`.
    pub fn count_selecting(&self, a: usize) -> usize {
        (0..self.num_states()).filter(|&s| self.action(s) == a).count()
    }

    pub fn to_csv(&self, config: &ModelConfig) -> String {
        let mut out = String::from("energy,queue");
        for a in 0..self.num_actions {
            write!(out, ",p_ch{a}").unwrap();
        }
        out.push('\n');
        for s in 0..self.num_states() {
            let st = config.state_at(s);
            write!(out, "{},{}", st.energy, st.queue).unwrap();
            for &p in self.row(s) {
                write!(out, ",{}", crate::fmt_num(p)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Parses a policy file for `config`. Row numbers in errors count data
    /// rows from 1 (the header is row 0).
    pub fn from_csv(text: &str, config: &ModelConfig) -> Result<Self, PolicyError> {
        let n = config.num_channels();
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().unwrap_or_default();
        let expected_header: Vec<String> = ["energy".to_string(), "queue".to_string()]
            .into_iter()
            .chain((0..n).map(|a| format!("p_ch{a}")))
            .collect();
        let got: Vec<&str> = header.split(',').map(str::trim).collect();
        if got != expected_header {
            return Err(PolicyError::BadHeader(header.to_string()));
        }

        let mut rows = Vec::with_capacity(config.num_states());
        for (i, line) in lines.enumerate() {
            let row_no = i + 1;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != n + 2 {
                return Err(PolicyError::WrongActionCount {
                    row: row_no,
                    expected: n,
                    got: fields.len().saturating_sub(2),
                });
            }
            if i < config.num_states() {
                let expected = config.state_at(i);
                if fields[0].parse::<u32>().ok() != Some(expected.energy)
                    || fields[1].parse::<u32>().ok() != Some(expected.queue)
                {
                    return Err(PolicyError::StateMismatch {
                        row: row_no,
                        expected,
                        energy: fields[0].to_string(),
                        queue: fields[1].to_string(),
                    });
                }
            }
            let row = fields[2..]
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| PolicyError::Parse {
                        row: row_no,
                        field: f.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        if rows.len() != config.num_states() {
            return Err(PolicyError::WrongStateCount {
                expected: config.num_states(),
                got: rows.len(),
            });
        }
        Self::from_rows_with_tolerance(rows, n, FILE_ROW_SUM_TOLERANCE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_short_row_sum_with_row_number() {
        let cfg = ModelConfig {
            queue_capacity: 1,
            energy_capacity: 1,
            ..ModelConfig::reference()
        };
        let text = "energy,queue,p_ch0,p_ch1\n0,0,1,0\n0,1,0.5,0.3\n1,0,0,1\n1,1,1,0\n";
        let err = Policy::from_csv(text, &cfg).unwrap_err();
        assert!(matches!(err, PolicyError::BadRowSum { row: 2, .. }), "{err:?}");
        assert!(err.to_string().contains("row 2"));
    }

    #[test]
    fn rejects_wrong_row_count_and_order() {
        let cfg = ModelConfig {
            queue_capacity: 1,
            energy_capacity: 1,
            ..ModelConfig::reference()
        };
        let short = "energy,queue,p_ch0,p_ch1\n0,0,1,0\n";
        assert_eq!(
            Policy::from_csv(short, &cfg),
            Err(PolicyError::WrongStateCount {
                expected: 4,
                got: 1
            })
        );
        let swapped = "energy,queue,p_ch0,p_ch1\n0,1,1,0\n0,0,1,0\n1,0,0,1\n1,1,1,0\n";
        assert!(matches!(
            Policy::from_csv(swapped, &cfg),
            Err(PolicyError::StateMismatch { row: 1, .. })
        ));
        assert!(matches!(
            Policy::from_csv("e,q,a,b\n", &cfg),
            Err(PolicyError::BadHeader(_))
        ));
    }

    #[test]
    fn deterministic_argmax_and_ties() {
        let p = Policy::deterministic(&[1, 0, 1], 2).unwrap();
        assert!(p.is_deterministic());
        assert_eq!(p.action(0), 1);
        assert_eq!(p.count_selecting(1), 2);
        let even = Policy::static_mix(1, &[0.5, 0.5]).unwrap();
        assert_eq!(even.action(0), 0);
        assert!(!even.is_deterministic());
        assert!(Policy::deterministic(&[2], 2).is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip(e in 1u32..4, q in 0u32..4, seed in proptest::collection::vec(0.0f64..1.0, 32)) {
            let cfg = ModelConfig { energy_capacity: e, queue_capacity: q, ..ModelConfig::reference() };
            let rows: Vec<Vec<f64>> = (0..cfg.num_states())
                .map(|s| { let p = seed[s % seed.len()]; vec![p, 1.0 - p] })
                .collect();
            let policy = Policy::from_rows(rows, 2).unwrap();
            let back = Policy::from_csv(&policy.to_csv(&cfg), &cfg).unwrap();
            for s in 0..cfg.num_states() {
                for a in 0..2 {
                    prop_assert!((policy.prob(s, a) - back.prob(s, a)).abs() < 1e-11);
                }
            }
        }
    }
}
