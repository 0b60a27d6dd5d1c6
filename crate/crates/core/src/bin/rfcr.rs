use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rfcr::config::{default_config, parse_config, ExperimentConfig, ExperimentKind};
use rfcr::experiments::{
    parse_grid, policy_map_csv, run_policy_map, run_simulate, run_sweep_idle, run_sweep_static,
    to_csv, ExperimentError, GridError,
};
use rfcr::solver::{self, DEFAULT_ORACLE_BUDGET};
use rfcr::{build_model, fmt_num, Execution, Policy, SimReport, SolverError};

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_CHECK_FAILED: u8 = 4;

#[derive(Parser)]
#[command(name = "rfcr", version, about = "Channel selection for an RF-powered secondary user")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Model/experiment TOML file; the built-in two-channel setup when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    slots: Option<u64>,
    #[arg(long, global = true)]
    replications: Option<usize>,
    /// Span tolerance for relative value iteration.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    /// `start:stop:step` or a comma list. Sets p for `sweep-static` and
    /// eta_1 for `sweep-idle`.
    #[arg(long, global = true)]
    grid: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal policy via relative value iteration; writes the policy file.
    Solve,
    /// Exact long-run throughput of a policy file or a static mix.
    Evaluate {
        #[arg(long, conflicts_with = "static_mix")]
        policy: Option<PathBuf>,
        /// Comma-separated channel probabilities, e.g. `0.5,0.5`.
        #[arg(long = "static")]
        static_mix: Option<String>,
    },
    /// Monte Carlo run of a policy file (the optimal policy when omitted).
    Simulate {
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Fail with exit code 4 if |simulated - exact| exceeds this.
        #[arg(long)]
        check: Option<f64>,
        #[arg(long)]
        burn_in: Option<u64>,
    },
    /// Static-policy throughput versus channel-1 probability.
    SweepStatic {
        /// Arrival probabilities, `start:stop:step` or comma list.
        #[arg(long)]
        arrivals: Option<String>,
    },
    /// Optimal versus best static throughput over channel-1 idle probability.
    SweepIdle {
        /// Static-policy grid over p.
        #[arg(long)]
        static_grid: Option<String>,
    },
    /// Brute force over all deterministic policies (small models only).
    Oracle {
        #[arg(long, default_value_t = DEFAULT_ORACLE_BUDGET)]
        budget: u64,
    },
    /// Optimal channel per (energy, queue) state.
    PolicyMap,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
    NotConverged(String),
    CheckFailed(String),
}

impl Failure {
    fn exit(&self) -> (u8, &str) {
        match self {
            Failure::Config(m) => (EXIT_CONFIG, m),
            Failure::Runtime(m) => (EXIT_RUNTIME, m),
            Failure::NotConverged(m) => (EXIT_NOT_CONVERGED, m),
            Failure::CheckFailed(m) => (EXIT_CHECK_FAILED, m),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Solver(s) => s.into(),
            ExperimentError::Grid(_)
            | ExperimentError::Model(_)
            | ExperimentError::NeedsTwoChannels(_)
            | ExperimentError::Policy(_) => Failure::Config(e.to_string()),
            ExperimentError::Sim(_) => Failure::Config(e.to_string()),
        }
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::NotConverged(_) => Failure::NotConverged(e.to_string()),
            SolverError::InvalidTolerance(_)
            | SolverError::InvalidDamping(_)
            | SolverError::BudgetExceeded { .. }
            | SolverError::EmptyGrid
            | SolverError::BadGridEntry { .. }
            | SolverError::PolicyShape { .. } => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn grid_arg(flag: &str, spec: &str) -> Result<Vec<f64>, Failure> {
    parse_grid(spec).map_err(|e: GridError| Failure::Config(format!("--{flag}: {e}")))
}

fn load(common: &Common, kind: ExperimentKind) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => parse_config(path).map_err(|e| Failure::Config(e.to_string()))?,
        None => default_config(),
    };
    cfg.kind = kind;
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    if let Some(seed) = common.seed {
        cfg.sim.seed = seed;
    }
    if let Some(slots) = common.slots {
        if slots == 0 {
            return Err(Failure::Config("--slots must be at least 1".into()));
        }
        cfg.sim.slots = slots;
    }
    if let Some(reps) = common.replications {
        if reps == 0 {
            return Err(Failure::Config("--replications must be at least 1".into()));
        }
        cfg.sim.replications = reps;
    }
    if let Some(tol) = common.tolerance {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Failure::Config("--tolerance must be positive".into()));
        }
        cfg.solver.tolerance = tol;
    }
    if let Some(spec) = &common.grid {
        let grid = grid_arg("grid", spec)?;
        match kind {
            ExperimentKind::SweepIdle => cfg.sweep.idle_grid = grid,
            _ => cfg.sweep.p_grid = grid,
        }
    }
    Ok(cfg)
}

/// Opens the output early so an unwritable path fails before any work.
fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    match path {
        Some(p) => File::create(p)
            .map(|f| Box::new(f) as Box<dyn Write>)
            .map_err(|e| Failure::Config(format!("cannot write {}: {e}", p.display()))),
        None => Ok(Box::new(std::io::stdout())),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Failure::Runtime(format!("write failed: {e}")))
}

fn read_policy(path: &Path, cfg: &ExperimentConfig) -> Result<Policy, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    Policy::from_csv(&text, &cfg.model)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let kind = match &cli.command {
        Command::Solve => ExperimentKind::Solve,
        Command::Evaluate { .. } => ExperimentKind::Evaluate,
        Command::Simulate { .. } => ExperimentKind::Simulate,
        Command::SweepStatic { .. } => ExperimentKind::SweepStatic,
        Command::SweepIdle { .. } => ExperimentKind::SweepIdle,
        Command::Oracle { .. } => ExperimentKind::Oracle,
        Command::PolicyMap => ExperimentKind::PolicyMap,
    };
    let mut cfg = load(&cli.common, kind)?;
    let exec = Execution::default();

    match cli.command {
        Command::Solve => {
            let mut out = open_out(&cfg.out)?;
            let model = build_model(&cfg.model).map_err(|e| Failure::Config(e.to_string()))?;
            let result = solver::solve_rvi(&model, &cfg.solver)?;
            eprintln!(
                "gain = {}\niterations = {}\nspan_residual = {}",
                fmt_num(result.gain),
                result.iterations,
                fmt_num(result.span_residual)
            );
            emit(&mut out, &result.policy.to_csv(&cfg.model))
        }
        Command::Evaluate { policy, static_mix } => {
            let model = build_model(&cfg.model).map_err(|e| Failure::Config(e.to_string()))?;
            let policy = match (policy, static_mix) {
                (Some(path), _) => read_policy(&path, &cfg)?,
                (None, Some(mix)) => {
                    let mix = mix
                        .split(',')
                        .map(|s| s.trim().parse::<f64>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|e| Failure::Config(format!("--static: {e}")))?;
                    Policy::static_mix(model.num_states(), &mix)
                        .map_err(|e| Failure::Config(format!("--static: {e}")))?
                }
                (None, None) => {
                    return Err(Failure::Config(
                        "evaluate needs --policy <file> or --static <mix>".into(),
                    ))
                }
            };
            let mut out = open_out(&cfg.out)?;
            let gain = solver::evaluate_policy(&model, &policy)?;
            emit(&mut out, &format!("gain = {}\n", fmt_num(gain)))
        }
        Command::Simulate {
            policy,
            check,
            burn_in,
        } => {
            if let Some(b) = burn_in {
                cfg.sim.burn_in = b;
            }
            if let Some(tol) = check {
                if !(tol >= 0.0 && tol.is_finite()) {
                    return Err(Failure::Config("--check must be non-negative".into()));
                }
            }
            let mut out = open_out(&cfg.out)?;
            let policy = match policy {
                Some(path) => read_policy(&path, &cfg)?,
                None => {
                    let model =
                        build_model(&cfg.model).map_err(|e| Failure::Config(e.to_string()))?;
                    solver::solve_rvi(&model, &cfg.solver)?.policy
                }
            };
            let outcome = run_simulate(&cfg.model, &policy, &cfg.sim, check, exec)?;
            eprint!("{}", outcome.report.to_key_values());
            if let Some(g) = outcome.analytic_gain {
                eprintln!("analytic_gain = {}", fmt_num(g));
            }
            emit(
                &mut out,
                &format!("{}\n{}\n", SimReport::CSV_HEADER, outcome.report.csv_row()),
            )?;
            match outcome.agreement() {
                Some(false) => Err(Failure::CheckFailed(format!(
                    "simulated throughput {} differs from exact gain {} by more than {}",
                    fmt_num(outcome.report.throughput),
                    fmt_num(outcome.analytic_gain.unwrap_or(f64::NAN)),
                    check.unwrap_or_default()
                ))),
                _ => Ok(()),
            }
        }
        Command::SweepStatic { arrivals } => {
            if let Some(spec) = arrivals {
                cfg.sweep.arrival_probs = grid_arg("arrivals", &spec)?;
            }
            let mut out = open_out(&cfg.out)?;
            let rows =
                run_sweep_static(&cfg.model, &cfg.sweep.arrival_probs, &cfg.sweep.p_grid, exec)?;
            emit(&mut out, &to_csv(&rows))
        }
        Command::SweepIdle { static_grid } => {
            if let Some(spec) = static_grid {
                cfg.sweep.p_grid = grid_arg("static-grid", &spec)?;
            }
            let mut out = open_out(&cfg.out)?;
            let rows = run_sweep_idle(
                &cfg.model,
                &cfg.sweep.idle_grid,
                &cfg.sweep.p_grid,
                &cfg.solver,
                exec,
            )?;
            emit(&mut out, &to_csv(&rows))
        }
        Command::Oracle { budget } => {
            let mut out = open_out(&cfg.out)?;
            let model = build_model(&cfg.model).map_err(|e| Failure::Config(e.to_string()))?;
            let (gain, policy) = solver::oracle_enumerate(&model, budget)?;
            eprintln!("best_gain = {}", fmt_num(gain));
            emit(&mut out, &policy.to_csv(&cfg.model))
        }
        Command::PolicyMap => {
            let mut out = open_out(&cfg.out)?;
            let (result, rows) = run_policy_map(&cfg.model, &cfg.solver)?;
            eprintln!("gain = {}", fmt_num(result.gain));
            emit(&mut out, &policy_map_csv(&rows))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = f.exit();
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
