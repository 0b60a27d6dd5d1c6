//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{brute_force_row, model_config, small_reference};
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rfcr::experiments::{default_idle_grid, default_p_grid, run_sweep_idle, run_sweep_static};
use rfcr::{
    build_model, enumerate_states, immediate_reward, oracle_enumerate, simulate, solve_rvi,
    Action, Execution, ModelConfig, Policy, SimConfig, SolveOptions, State,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn check(name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = f();
    let elapsed = start.elapsed();
    let in_time = limit.is_none_or(|l| elapsed < l);
    let passed = outcome.passed && in_time;
    let budget = limit.map_or(String::new(), |l| format!(" / limit {:.0}s", l.as_secs_f64()));
    println!(
        "[{}] {name}: {} ({:.2}s{budget})",
        if passed { "PASS" } else { "FAIL" },
        outcome.detail,
        elapsed.as_secs_f64()
    );
    passed
}

fn oracle_equivalence() -> Outcome {
    let m = build_model(&small_reference()).unwrap();
    let rvi = solve_rvi(&m, &SolveOptions::default()).unwrap();
    let (oracle, _) = oracle_enumerate(&m, 512).unwrap();
    let diff = (rvi.gain - oracle).abs();
    Outcome {
        passed: diff <= 1e-8,
        detail: format!("rvi {:.12} oracle {:.12} |diff| {diff:.2e} <= 1e-8", rvi.gain, oracle),
    }
}

fn solver_simulator_agreement() -> Outcome {
    let cfg = ModelConfig::reference();
    let m = build_model(&cfg).unwrap();
    let opt = solve_rvi(&m, &SolveOptions::default()).unwrap();
    let sim = SimConfig {
        slots: 1_000_000,
        replications: 10,
        seed: 2024,
        ..Default::default()
    };
    let r = simulate(&cfg, &opt.policy, &sim).unwrap();
    let band = (3.0 * r.std_error).max(0.005);
    let diff = (r.throughput - opt.gain).abs();
    Outcome {
        passed: m.num_states() == 121 && diff <= band,
        detail: format!(
            "sim {:.6} (se {:.2e}) vs gain {:.6}, |diff| {diff:.2e} <= {band:.2e}",
            r.throughput, r.std_error, opt.gain
        ),
    }
}

fn static_tradeoff_shape() -> Outcome {
    let rows = run_sweep_static(
        &ModelConfig::reference(),
        &[0.2, 0.5],
        &default_p_grid(),
        Execution::default(),
    )
    .unwrap();
    let mut peaks = Vec::new();
    let mut interior = true;
    for alpha in [0.2, 0.5] {
        let curve: Vec<f64> = rows
            .iter()
            .filter(|r| r.arrival_prob == alpha)
            .map(|r| r.throughput)
            .collect();
        let peak = curve.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        interior &= peak > curve[0] && peak > curve[curve.len() - 1];
        peaks.push(peak);
    }
    let passed = interior && peaks[0] < peaks[1] && peaks[0] <= 0.2;
    Outcome {
        passed,
        detail: format!(
            "interior max for both: {interior}; peak(0.2) {:.9} < peak(0.5) {:.9}; peak(0.2) <= 0.2",
            peaks[0], peaks[1]
        ),
    }
}

fn policy_structure() -> Outcome {
    let cfg = ModelConfig::reference();
    let m = build_model(&cfg).unwrap();
    let r = solve_rvi(&m, &SolveOptions::default()).unwrap();
    let at_empty = r.policy.action(cfg.state_index(State::new(0, 0)));
    let at_full = r.policy.action(cfg.state_index(State::new(10, 10)));
    let (c1, c2) = (r.policy.count_selecting(0), r.policy.count_selecting(1));
    Outcome {
        passed: at_empty == 0 && at_full == 1 && c1 > c2,
        detail: format!(
            "(0,0) -> c{}, (10,10) -> c{}, states on c1 {c1} vs c2 {c2}",
            at_empty + 1,
            at_full + 1
        ),
    }
}

fn idle_sweep_dominance() -> Outcome {
    let rows = run_sweep_idle(
        &ModelConfig::reference(),
        &default_idle_grid(),
        &default_p_grid(),
        &SolveOptions::default(),
        Execution::default(),
    )
    .unwrap();
    let dominated = rows
        .iter()
        .all(|r| r.optimal_throughput >= r.best_static_throughput - 1e-8);
    let argmax = rows
        .iter()
        .enumerate()
        .fold(0, |best, (i, r)| {
            if r.optimal_throughput > rows[best].optimal_throughput {
                i
            } else {
                best
            }
        });
    let interior = argmax > 0 && argmax + 1 < rows.len();
    // rises up to the argmax, falls after it
    let rises = rows[..=argmax]
        .windows(2)
        .all(|w| w[1].optimal_throughput >= w[0].optimal_throughput - 1e-12);
    let falls = rows[argmax..]
        .windows(2)
        .all(|w| w[1].optimal_throughput <= w[0].optimal_throughput + 1e-12);
    Outcome {
        passed: dominated && interior && rises && falls,
        detail: format!(
            "optimal >= static everywhere: {dominated}; argmax eta1 = {:.2} ({:.6}); rises {rises}, falls {falls}",
            rows[argmax].idle_prob_1, rows[argmax].optimal_throughput
        ),
    }
}

fn kernel_properties() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let result = runner.run(&model_config(), |cfg| {
        let m = build_model(&cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for (s, st) in enumerate_states(&cfg).into_iter().enumerate() {
            for a in 0..m.num_actions() {
                let row = m.successors(s, a);
                let sum: f64 = row.iter().map(|(_, p)| p).sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(TestCaseError::fail(format!("{st} a={a}: row sums to {sum}")));
                }
                let oracle = brute_force_row(&cfg, st.energy, st.queue, a);
                let mut matched = 0.0;
                for &(t, p) in row {
                    let ts = cfg.state_at(t);
                    if !cfg.contains(ts) || !(0.0..=1.0).contains(&p) {
                        return Err(TestCaseError::fail(format!("{st} a={a}: bad entry {ts} {p}")));
                    }
                    let expected = oracle.get(&(ts.energy, ts.queue)).copied().unwrap_or(0.0);
                    if (p - expected).abs() > 1e-15 {
                        return Err(TestCaseError::fail(format!(
                            "{st} a={a} -> {ts}: {p} vs oracle {expected}"
                        )));
                    }
                    matched += expected;
                }
                let oracle_mass: f64 = oracle.values().sum();
                if (matched - oracle_mass).abs() > 1e-12 {
                    return Err(TestCaseError::fail(format!("{st} a={a}: oracle mass missing")));
                }
                let ch = cfg.channels[a];
                let expected_reward = if st.energy >= cfg.tx_cost && st.queue > 0 {
                    ch.idle_prob * ch.tx_success_prob
                } else {
                    0.0
                };
                if immediate_reward(&cfg, st, Action(a)) != expected_reward
                    || m.reward(s, a) != expected_reward
                {
                    return Err(TestCaseError::fail(format!("{st} a={a}: reward mismatch")));
                }
            }
        }
        Ok(())
    });
    Outcome {
        passed: result.is_ok(),
        detail: match result {
            Ok(()) => "1000 random models: rows stochastic, in bounds, rewards exact, kernel = event oracle".into(),
            Err(e) => e.to_string(),
        },
    }
}

fn degenerate_ceilings() -> Outcome {
    let mut details = Vec::new();
    let mut passed = true;
    for (label, idle) in [("all-idle", 1.0), ("all-busy", 0.0)] {
        let mut cfg = ModelConfig::reference();
        for ch in &mut cfg.channels {
            ch.idle_prob = idle;
        }
        let m = build_model(&cfg).unwrap();
        // default tolerance stops short of the exact fixed point on the
        // all-idle model; 1e-15 iterates until the differences vanish
        let exact = solve_rvi(
            &m,
            &SolveOptions {
                tolerance: 1e-15,
                ..Default::default()
            },
        )
        .unwrap();
        let default = solve_rvi(&m, &SolveOptions::default()).unwrap();
        let sim = SimConfig {
            slots: 200_000,
            replications: 4,
            seed: 11,
            initial_state: State::new(10, 5),
            ..Default::default()
        };
        let policy = Policy::deterministic(&vec![0; m.num_states()], 2).unwrap();
        let burned = SimConfig {
            burn_in: 10_000,
            ..sim
        };
        let r_opt = simulate(&cfg, &exact.policy, &burned).unwrap();
        let r_fixed = simulate(&cfg, &policy, &burned).unwrap();
        let ok = exact.gain == 0.0 && r_opt.throughput == 0.0 && r_fixed.throughput == 0.0;
        passed &= ok;
        details.push(format!(
            "{label}: solver {} (default tol {:.1e}), sim {} / {}",
            exact.gain, default.gain, r_opt.throughput, r_fixed.throughput
        ));
    }
    Outcome {
        passed,
        detail: details.join("; "),
    }
}

fn main() -> ExitCode {
    let secs = |s| Some(Duration::from_secs(s));
    let results = [
        check("1 oracle equivalence (E=Q=2, 512 policies)", secs(10), oracle_equivalence),
        check("2 solver-simulator agreement (10 x 1e6 slots)", secs(30), solver_simulator_agreement),
        check("3 static tradeoff shape", secs(5), static_tradeoff_shape),
        check("4 optimal policy structure", secs(5), policy_structure),
        check("5 idle sweep dominance and shape", secs(60), idle_sweep_dominance),
        check("6 kernel property suite", None, kernel_properties),
        check("7 degenerate ceilings", None, degenerate_ceilings),
    ];
    let failed = results.iter().filter(|&&ok| !ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
