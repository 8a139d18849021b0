//! Command-line front end: `solve-ot`, `train`, `sweep` and `verify`.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or configuration
//! error, 3 runtime failure. `OTRL_LOG` sets the log level.

use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::mdp::{build_gridworld, Gridworld, GridworldSpec};
use crate::ot::{
    build_cost_matrix, solve_exact, solve_regularized, CostMatrix, DiscreteDistribution,
    OtSolverKind, RegularizedOptions,
};
use crate::risk::{
    greedy_policy, lambda_sweep, risk_aware_q_learning, score_policy, PenaltyMode, PenaltyScaling,
    RiskAwareConfig, RiskProblem, SweepMethod, SweepSettings, VisitationMode,
};
use crate::theorems::{hard_failures, run_suite, summarize, SuiteOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFICATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) | Self::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::Parse { .. } | Error::TooLarge { .. } => {
                Self::Usage(e.to_string())
            }
            Error::SolverFailure { .. } | Error::ConvergenceFailure { .. } | Error::Numerical(_) => {
                Self::Runtime(e.to_string())
            }
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn write_error(path: &Path, e: io::Error) -> CliError {
    CliError::Usage(format!("cannot write {}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "otrl", version, about = "Risk-aware tabular RL with optimal-transport penalties")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one transport problem and print its cost.
    SolveOt(SolveOtArgs),
    /// Train risk-aware Q-learning on a gridworld.
    Train(RunArgs),
    /// Sweep the risk sensitivity λ.
    Sweep(RunArgs),
    /// Check the theorem suite on random MDPs.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SolverArg {
    Exact,
    Regularized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum DistArg {
    #[default]
    Stationary,
    Occupancy,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Global,
    Dual,
    Pointwise,
}

impl From<ModeArg> for PenaltyMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Global => PenaltyMode::Global,
            ModeArg::Dual => PenaltyMode::Dual,
            ModeArg::Pointwise => PenaltyMode::Pointwise,
        }
    }
}

#[derive(Debug, Args)]
struct SolveOtArgs {
    /// Source weights, one per line.
    #[arg(long)]
    mu: PathBuf,
    /// Target weights, one per line.
    #[arg(long)]
    nu: PathBuf,
    /// State coordinates, one point per line; the cost is squared Euclidean distance.
    #[arg(long, conflicts_with = "cost", required_unless_present = "cost")]
    embedding: Option<PathBuf>,
    /// Explicit cost matrix, one row per line.
    #[arg(long)]
    cost: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "exact")]
    solver: SolverArg,
    /// Entropic regularization; defaults to 1e-2 times the largest cost.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Iteration budget for the regularized solver.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Marginal tolerance for the regularized solver.
    #[arg(long)]
    tol: Option<f64>,
    /// Write the transport plan as CSV.
    #[arg(long)]
    plan_out: Option<PathBuf>,
    /// Write the dual potentials as CSV.
    #[arg(long)]
    duals_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Visitation distribution used to evaluate policies.
    #[arg(long, value_enum)]
    dist: Option<DistArg>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Comma-separated theorem ids.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    theorems: Vec<u8>,
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "verify-run")]
    out: PathBuf,
    /// Visitation distribution for the primary pass; the other runs as a secondary pass.
    #[arg(long, value_enum, default_value = "stationary")]
    dist: DistArg,
    /// Skip the secondary pass.
    #[arg(long)]
    primary_only: bool,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("OTRL_LOG", "error"))
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::SolveOt(a) => cmd_solve_ot(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Verify(a) => cmd_verify(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

/// Rows of numbers separated by commas or whitespace; blank lines and `#` comments are skipped.
fn read_numeric_rows(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let text = read_text(path)?;
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let row = content
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>().map_err(|_| {
                    CliError::Usage(format!(
                        "{}:{}: cannot parse {t:?} as a number",
                        path.display(),
                        k + 1
                    ))
                })
            })
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Usage(format!("{} contains no data", path.display())));
    }
    Ok(rows)
}

fn read_distribution(path: &Path) -> CliResult<DiscreteDistribution> {
    let rows = read_numeric_rows(path)?;
    let mut weights = Vec::with_capacity(rows.len());
    for row in rows {
        if row.len() != 1 {
            return Err(CliError::Usage(format!(
                "{}: expected one weight per line, found a line with {}",
                path.display(),
                row.len()
            )));
        }
        weights.push(row[0]);
    }
    DiscreteDistribution::new(weights)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn create_file(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| write_error(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| write_error(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> CliResult<()> {
    let mut w = create_file(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| write_error(path, e))
}

fn cmd_solve_ot(args: &SolveOtArgs) -> CliResult<i32> {
    let mu = read_distribution(&args.mu)?;
    let nu = read_distribution(&args.nu)?;
    let cost = match (&args.embedding, &args.cost) {
        (Some(path), _) => build_cost_matrix(read_numeric_rows(path)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
        (None, Some(path)) => CostMatrix::from_rows(read_numeric_rows(path)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
        (None, None) => return Err(CliError::Usage("one of --embedding or --cost is required".into())),
    };
    if let Some(eps) = args.epsilon {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(CliError::Usage(format!("--epsilon must be positive, got {eps}")));
        }
    }
    let solution = match args.solver {
        SolverArg::Exact => solve_exact(&mu, &nu, &cost)?,
        SolverArg::Regularized => {
            let defaults = RegularizedOptions::default();
            let opts = RegularizedOptions {
                epsilon: args
                    .epsilon
                    .unwrap_or_else(|| RegularizedOptions::default_epsilon(&cost)),
                max_iter: args.max_iter.unwrap_or(defaults.max_iter),
                tol: args.tol.unwrap_or(defaults.tol),
            };
            solve_regularized(&mu, &nu, &cost, &opts)?
        }
    };
    log::info!(
        "solved {}x{} problem in {} iterations",
        cost.n(),
        cost.n(),
        solution.iterations
    );
    println!("{:.12}", solution.cost);

    if let Some(path) = &args.plan_out {
        write_with(path, |w| {
            for i in 0..cost.n() {
                let row: Vec<String> = (0..cost.n()).map(|j| solution.plan.get(i, j).to_string()).collect();
                writeln!(w, "{}", row.join(","))?;
            }
            Ok(())
        })?;
    }
    if let Some(path) = &args.duals_out {
        write_with(path, |w| {
            writeln!(w, "state,source,target")?;
            for (s, (u, v)) in solution.dual_source.iter().zip(&solution.dual_target).enumerate() {
                writeln!(w, "{s},{u},{v}")?;
            }
            Ok(())
        })?;
    }
    Ok(EXIT_OK)
}

/// Gridworld section of a run configuration. Either `map` (rows of the
/// map) or `map_file` (relative to the config file) must be given.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub map: Option<Vec<String>>,
    pub map_file: Option<PathBuf>,
    pub step_reward: Option<f64>,
    pub goal_reward: Option<f64>,
    pub hazard_reward: Option<f64>,
    pub slip_prob: Option<f64>,
    pub discount: Option<f64>,
}

/// `"uniform-safe"`, `"dirac:<state>"`, or an explicit probability vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RiskSpec {
    Named(String),
    Vector(Vec<f64>),
}

impl Default for RiskSpec {
    fn default() -> Self {
        Self::Named("uniform-safe".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverName {
    #[default]
    Exact,
    Regularized,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OtConfig {
    pub solver: SolverName,
    pub epsilon: Option<f64>,
    /// Divide the cost matrix by its largest entry.
    pub normalize_cost: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    pub method: SweepMethod,
    pub ball_delta: Option<f64>,
    pub scaling: PenaltyScaling,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0],
            method: SweepMethod::Brute,
            ball_delta: None,
            scaling: PenaltyScaling::Plain,
        }
    }
}

/// A complete run: one JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub risk: RiskSpec,
    #[serde(default)]
    pub ot: OtConfig,
    #[serde(default)]
    pub rl: RiskAwareConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    pub output_dir: Option<PathBuf>,
    /// Overrides `rl.seed`.
    pub seed: Option<u64>,
    #[serde(default)]
    dist: DistArg,
    #[serde(default = "default_damping")]
    pub damping: f64,
}

fn default_damping() -> f64 {
    VisitationMode::DEFAULT_DAMPING
}

struct LoadedRun {
    config: RunConfig,
    world: Gridworld,
    problem: RiskProblem,
    rl: RiskAwareConfig,
    visitation: VisitationMode,
    out_dir: PathBuf,
}

fn load_run(args: &RunArgs) -> CliResult<LoadedRun> {
    let text = read_text(&args.config)?;
    let config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.config.display())))?;
    let base = args.config.parent().unwrap_or(Path::new("."));

    let env = &config.environment;
    let mut spec = match (&env.map, &env.map_file) {
        (Some(rows), None) => GridworldSpec::from_rows(rows)?,
        (None, Some(file)) => {
            let path = base.join(file);
            GridworldSpec::parse(&read_text(&path)?)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        _ => {
            return Err(CliError::Usage(
                "environment needs exactly one of `map` or `map_file`".into(),
            ))
        }
    };
    if let Some(v) = env.step_reward {
        spec.step_reward = v;
    }
    if let Some(v) = env.goal_reward {
        spec.goal_reward = v;
    }
    if let Some(v) = env.hazard_reward {
        spec.hazard_reward = v;
    }
    if let Some(v) = env.slip_prob {
        spec.slip_prob = v;
    }
    if let Some(v) = env.discount {
        spec.discount = v;
    }
    let world = build_gridworld(&spec)?;
    let n = world.mdp.n_states();

    let risk = match &config.risk {
        RiskSpec::Named(name) if name == "uniform-safe" => world.risk.clone(),
        RiskSpec::Named(name) => match name.strip_prefix("dirac:").map(str::parse::<usize>) {
            Some(Ok(state)) => DiscreteDistribution::dirac(n, state)?,
            _ => {
                return Err(CliError::Usage(format!(
                    "unknown risk distribution {name:?} (expected \"uniform-safe\", \"dirac:<state>\" or a vector)"
                )))
            }
        },
        RiskSpec::Vector(w) => DiscreteDistribution::from_probabilities(w.clone())?,
    };
    let mut cost = world.cost_matrix();
    if config.ot.normalize_cost {
        cost = cost.normalized_by_max();
    }
    let problem = RiskProblem::new(world.mdp.clone(), risk, cost)?.with_hazards(world.hazards.clone())?;

    let mut rl = config.rl.clone();
    rl.ot_solver = match config.ot.solver {
        SolverName::Exact => OtSolverKind::Exact,
        SolverName::Regularized => OtSolverKind::Regularized {
            epsilon: config.ot.epsilon,
        },
    };
    if let Some(eps) = config.ot.epsilon {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(CliError::Usage(format!("ot.epsilon must be positive, got {eps}")));
        }
    }
    if let Some(seed) = args.seed.or(config.seed) {
        rl.seed = seed;
    }
    if let Some(mode) = args.mode {
        rl.penalty_mode = mode.into();
    }
    rl.validate()?;

    if !(0.0..=0.1).contains(&config.damping) {
        return Err(CliError::Usage(format!(
            "damping must lie in [0, 0.1], got {}",
            config.damping
        )));
    }
    let visitation = match args.dist.unwrap_or(config.dist) {
        DistArg::Stationary => VisitationMode::Stationary {
            damping: config.damping,
        },
        DistArg::Occupancy => VisitationMode::Occupancy,
    };
    let out_dir = args
        .out
        .clone()
        .or_else(|| config.output_dir.as_ref().map(|d| base.join(d)))
        .ok_or_else(|| CliError::Usage("no output directory: set `output_dir` or pass --out".into()))?;
    fs::create_dir_all(&out_dir).map_err(|e| write_error(&out_dir, e))?;

    Ok(LoadedRun {
        config,
        world,
        problem,
        rl,
        visitation,
        out_dir,
    })
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    lambda: f64,
    penalty_mode: PenaltyMode,
    visitation: VisitationMode,
    seed: u64,
    episodes: usize,
    ot_distance: f64,
    expected_return: f64,
    objective: f64,
    hazard_mass: f64,
    greedy_policy: Vec<String>,
}

fn cmd_train(args: &RunArgs) -> CliResult<i32> {
    let run = load_run(args)?;
    let (q, log) = risk_aware_q_learning(&run.problem, &run.rl)?;
    let policy = greedy_policy(&q);
    let score = score_policy(&run.problem, &policy, run.visitation)?;
    let objective = score.objective(
        run.rl.lambda,
        run.rl.penalty_scaling,
        run.problem.mdp.discount(),
    );
    let actions = policy.as_deterministic().expect("greedy policies are deterministic");

    let dir = &run.out_dir;
    write_with(&dir.join("training_log.csv"), |w| log.write_csv(w))?;
    write_with(&dir.join("q_table.csv"), |w| q.write_csv(w))?;
    write_with(&dir.join("greedy_policy.csv"), |w| {
        writeln!(w, "state,action")?;
        for (s, a) in actions.iter().enumerate() {
            writeln!(w, "{s},{a}")?;
        }
        Ok(())
    })?;
    let summary = TrainSummary {
        lambda: run.rl.lambda,
        penalty_mode: run.rl.penalty_mode,
        visitation: run.visitation,
        seed: run.rl.seed,
        episodes: run.rl.episodes,
        ot_distance: score.ot_distance,
        expected_return: score.expected_return,
        objective,
        hazard_mass: run.problem.hazard_mass(&score.visitation),
        greedy_policy: actions
            .iter()
            .enumerate()
            .map(|(s, &a)| {
                let (r, c) = run.world.coords[s];
                format!("({r},{c}) {}", crate::mdp::Action::ALL[a])
            })
            .collect(),
    };
    write_with(&dir.join("summary.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        writeln!(w)
    })?;
    log::info!("wrote training artifacts to {}", dir.display());
    Ok(EXIT_OK)
}

fn cmd_sweep(args: &RunArgs) -> CliResult<i32> {
    let run = load_run(args)?;
    let sweep = &run.config.sweep;
    let settings = SweepSettings {
        lambdas: sweep.lambdas.clone(),
        method: sweep.method,
        visitation: run.visitation,
        scaling: sweep.scaling,
        ball_delta: sweep.ball_delta,
    };
    let records = lambda_sweep(&run.problem, &settings, &run.rl)?;
    write_with(&run.out_dir.join("sweep.csv"), |w| {
        writeln!(w, "lambda,expected_return,ot_distance,objective,hazard_mass,ball_mass")?;
        for r in &records {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.lambda, r.expected_return, r.ot_distance, r.objective, r.hazard_mass, r.ball_mass
            )?;
        }
        Ok(())
    })?;
    log::info!("wrote {} sweep rows", records.len());
    Ok(EXIT_OK)
}

fn cmd_verify(args: &VerifyArgs) -> CliResult<i32> {
    let (primary, secondary) = match args.dist {
        DistArg::Stationary => (VisitationMode::default(), VisitationMode::Occupancy),
        DistArg::Occupancy => (VisitationMode::Occupancy, VisitationMode::default()),
    };
    let options = SuiteOptions {
        theorems: args.theorems.clone(),
        instances: args.instances,
        seed: args.seed,
        primary,
        secondary: (!args.primary_only).then_some(secondary),
    };
    let reports = run_suite(&options)?;
    fs::create_dir_all(&args.out).map_err(|e| write_error(&args.out, e))?;
    write_with(&args.out.join("theorem_reports.jsonl"), |w| {
        for r in &reports {
            writeln!(w, "{}", r.to_json_line())?;
        }
        Ok(())
    })?;

    println!(
        "{:<8} {:<11} {:>9} {:>7} {:>9} {:>8}",
        "theorem", "visitation", "instances", "holds", "violated", "vacuous"
    );
    for row in summarize(&reports) {
        println!(
            "{:<8} {:<11} {:>9} {:>7} {:>9} {:>8}",
            row.theorem, row.visitation, row.instances, row.holds, row.violated, row.vacuous
        );
    }
    let failures = hard_failures(&reports);
    if failures.is_empty() {
        Ok(EXIT_OK)
    } else {
        for r in &failures {
            eprintln!("violated: theorem {} on {:?}", r.theorem, r.instance);
        }
        Ok(EXIT_VERIFICATION)
    }
}
