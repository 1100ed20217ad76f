//! Command-line front end. Every command resolves a problem, runs, and writes
//! its artifacts plus a manifest under `--out`.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::hjb::{
    residual, solve_backward_with, HjbError, ObstacleScheme, TerminalSelector, COMPLEMENTARITY_C,
};
use crate::info::PolicySource;
use crate::io::{self, ArtifactWriter, IoError, Manifest};
use crate::model::{content_hash, validate_problem, ModelError, ProblemSpec, ValidatedProblem};
use crate::parallel::Execution;
use crate::presets;
use crate::regions::{default_tolerance, extract_regions};
use crate::scenarios::{self, ScenarioError, ScenarioResult, Settings};
use crate::simulate::{
    calibrate, path_rng, realized_payoff, summarize, SimError, SimulationOptions, Simulator,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] HjbError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) | CliError::Model(_) => "config",
            CliError::Solver(_) => "solver",
            CliError::Simulation(_) => "simulation",
            CliError::Scenario(e) => match e {
                ScenarioError::Model(_) => "config",
                ScenarioError::Solver(_) => "solver",
                ScenarioError::Simulation(_) => "simulation",
                ScenarioError::Invalid(_) | ScenarioError::Info(_) => "scenario",
            },
            CliError::Io(_) => "io",
        }
    }

    /// One-line JSON error report.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": { "kind": self.kind(), "message": self.to_string() } })
            .to_string()
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "optswitch",
    version,
    about = "Optimal switching migration models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the value function and write it with a complementarity report.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, value_enum, default_value_t = TerminalArg::Model)]
        terminal: TerminalArg,
    },
    /// Solve and extract the switching regions.
    Regions {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, value_enum, default_value_t = TerminalArg::Model)]
        terminal: TerminalArg,
    },
    /// Solve, extract regions and run a seeded ensemble under them.
    Simulate {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        ensemble: EnsembleArgs,
        #[arg(long, value_enum, default_value_t = TerminalArg::Model)]
        terminal: TerminalArg,
        /// Number of leading paths whose full step history is written.
        #[arg(long, default_value_t = 10)]
        trajectories: usize,
        /// Stop paths that touch x = 0 instead of reflecting them.
        #[arg(long)]
        absorbing_origin: bool,
    },
    /// Run one of the sweep experiments.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
}

#[derive(Debug, Subcommand)]
pub enum ScenarioCommand {
    /// Scale one site's staging reward by (1 - lambda) over a grid.
    Deteriorate {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        ensemble: EnsembleArgs,
        #[arg(long, value_delimiter = ',')]
        lambda_grid: Option<Vec<f64>>,
        /// Terminal peak moves earlier by gamma * T * lambda.
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long, default_value_t = scenarios::DETERIORATED_SITE)]
        site: usize,
    },
    /// Perceived reward plus a sinusoidal disturbance of growing amplitude.
    Noise {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        ensemble: EnsembleArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
        amplitude_grid: Vec<f64>,
    },
    /// Step-function perceived rewards with an information option.
    Mode1 {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        ensemble: EnsembleArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
        partition_grid: Vec<usize>,
        #[arg(long, default_value_t = presets::SWITCH_COST)]
        h_informed: f64,
        #[arg(long, value_enum, default_value_t = PolicyArg::Optimal)]
        policy: PolicyArg,
    },
    /// Actual reward peaking t_move earlier than perceived.
    Mode2 {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        ensemble: EnsembleArgs,
        /// Defaults to T/4.
        #[arg(long)]
        t_move: Option<f64>,
        #[arg(long, default_value_t = presets::SWITCH_COST)]
        h_informed: f64,
        #[arg(long, value_enum, default_value_t = PolicyArg::Optimal)]
        policy: PolicyArg,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    /// Bundled parameter set: table1 or table2.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// JSON problem file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub nt: Option<usize>,
    #[arg(long, value_enum, default_value_t = SchemeArg::Coupled)]
    pub scheme: SchemeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EnsembleArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = scenarios::DEFAULT_PATHS)]
    pub paths: usize,
    /// Simulation cell width in model units.
    #[arg(long)]
    pub dx_sim: Option<f64>,
    #[arg(long, value_enum, default_value_t = ExecutionArg::Parallel)]
    pub execution: ExecutionArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalArg {
    Model,
    Perceived,
    Actual,
}

impl From<TerminalArg> for TerminalSelector {
    fn from(t: TerminalArg) -> Self {
        match t {
            TerminalArg::Model => TerminalSelector::Model,
            TerminalArg::Perceived => TerminalSelector::Perceived,
            TerminalArg::Actual => TerminalSelector::Actual,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Coupled,
    Split,
}

impl From<SchemeArg> for ObstacleScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Coupled => ObstacleScheme::Coupled,
            SchemeArg::Split => ObstacleScheme::Split,
        }
    }
}

/// How paths enter the informed regime in the information experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    /// Follow the solved switching regions.
    Optimal,
    /// Switch to the informed regime after one waiting step at the stop-over.
    InformedAfterStopover,
}

impl From<PolicyArg> for PolicySource {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Optimal => PolicySource::Optimal,
            PolicyArg::InformedAfterStopover => PolicySource::InformedAfterStopover,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExecutionArg {
    Parallel,
    Sequential,
}

impl From<ExecutionArg> for Execution {
    fn from(e: ExecutionArg) -> Self {
        match e {
            ExecutionArg::Parallel => Execution::Parallel,
            ExecutionArg::Sequential => Execution::Sequential,
        }
    }
}

/// Everything that determines a run's artifacts. Its hash is the manifest's
/// config hash.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub problem: ProblemSpec,
    pub settings: Settings,
    pub parameters: serde_json::Value,
}

fn load_spec(args: &ProblemArgs, default_preset: &str) -> Result<ProblemSpec, CliError> {
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        return serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())));
    }
    let name = args.preset.as_deref().unwrap_or(default_preset);
    presets::by_name(name).ok_or_else(|| CliError::Usage(format!("unknown preset '{name}'")))
}

fn settings(problem: &ProblemArgs, ensemble: Option<&EnsembleArgs>) -> Settings {
    let mut s = Settings::new(ensemble.map_or(0, |e| e.seed));
    s.nx = problem.nx;
    s.nt = problem.nt;
    s.scheme = problem.scheme.into();
    if let Some(e) = ensemble {
        s.n_paths = e.paths;
        s.dx_sim = e.dx_sim;
        s.execution = e.execution.into();
    }
    s
}

/// Execution strategy never changes artifacts, so it is left out of the
/// hashed configuration.
fn hashed_settings(mut s: Settings) -> Settings {
    s.execution = Execution::default();
    s
}

fn start_writer(out: &PathBuf, config: &RunConfig) -> Result<(ArtifactWriter, String), CliError> {
    let mut w = ArtifactWriter::create(out)?;
    let hash = content_hash(config);
    w.write_json("config.json", config)?;
    Ok((w, hash))
}

#[derive(Serialize)]
struct ResidualReport {
    max_abs: f64,
    regime: usize,
    step: usize,
    node: usize,
    dt: f64,
    tolerance: f64,
    within_tolerance: bool,
}

fn solve_stage(
    w: &mut ArtifactWriter,
    problem: &ValidatedProblem,
    settings: &Settings,
    terminal: TerminalSelector,
) -> Result<crate::hjb::ValueField, CliError> {
    let grid = settings.grid(problem)?;
    let clock = Instant::now();
    let v = solve_backward_with(problem, &grid, terminal, settings.scheme)?;
    w.record_timing("solve", clock.elapsed().as_secs_f64());
    io::write_value_field(w, "values", &v)?;
    let res = residual(&v);
    let (max_abs, (regime, step, node)) = res.max_abs();
    let tolerance = COMPLEMENTARITY_C * grid.dt;
    w.write_json(
        "residual.json",
        &ResidualReport {
            max_abs,
            regime,
            step,
            node,
            dt: grid.dt,
            tolerance,
            within_tolerance: max_abs <= tolerance,
        },
    )?;
    w.write_json("problem.json", &io::problem_json(problem))?;
    Ok(v)
}

fn regions_stage(
    w: &mut ArtifactWriter,
    v: &crate::hjb::ValueField,
) -> Result<crate::regions::SwitchingRegions, CliError> {
    let clock = Instant::now();
    let r = extract_regions(v, default_tolerance(v));
    w.record_timing("regions", clock.elapsed().as_secs_f64());
    w.write_json("regions.json", &io::encode_regions(&r))?;
    w.write_text("region_nodes.csv", &io::region_nodes_csv(&r))?;
    w.write_text("region_boundary.csv", &io::region_boundary_csv(&r))?;
    Ok(r)
}

fn write_scenario(w: &mut ArtifactWriter, result: &ScenarioResult) -> Result<(), CliError> {
    for t in &result.tables {
        w.write_text(&format!("{}.csv", t.name), &t.to_csv())?;
    }
    Ok(())
}

type Started = (ArtifactWriter, String, &'static str);

fn run_solve(
    problem: ProblemArgs,
    terminal: TerminalArg,
    with_regions: bool,
) -> Result<Started, CliError> {
    let name = if with_regions { "regions" } else { "solve" };
    let spec = load_spec(&problem, "table2")?;
    let s = settings(&problem, None);
    let config = RunConfig {
        command: name.into(),
        problem: spec.clone(),
        settings: hashed_settings(s),
        parameters: serde_json::json!({ "terminal": terminal }),
    };
    let (mut w, hash) = start_writer(&problem.out, &config)?;
    let p = validate_problem(&spec)?;
    let v = solve_stage(&mut w, &p, &s, terminal.into())?;
    if with_regions {
        regions_stage(&mut w, &v)?;
    }
    Ok((w, hash, name))
}

fn run_simulate(
    problem: ProblemArgs,
    ensemble: EnsembleArgs,
    terminal: TerminalArg,
    trajectories: usize,
    absorbing_origin: bool,
) -> Result<Started, CliError> {
    let spec = load_spec(&problem, "table2")?;
    let s = settings(&problem, Some(&ensemble));
    let config = RunConfig {
        command: "simulate".into(),
        problem: spec.clone(),
        settings: hashed_settings(s),
        parameters: serde_json::json!({
            "terminal": terminal,
            "trajectories": trajectories,
            "absorbing_origin": absorbing_origin,
        }),
    };
    let (mut w, hash) = start_writer(&problem.out, &config)?;
    let p = validate_problem(&spec)?;
    let sel: TerminalSelector = terminal.into();
    let v = solve_stage(&mut w, &p, &s, sel)?;
    let r = regions_stage(&mut w, &v)?;
    let cal = calibrate(&p, s.sim_dx(&p, v.grid()))?;
    let options = SimulationOptions {
        absorbing_origin,
        ..SimulationOptions::default()
    };
    let clock = Instant::now();
    let sim = Simulator::new(&p, &r, cal.clone(), options)?;
    let paths = sim.ensemble(p.start(), s.n_paths, s.seed, s.execution)?;
    w.record_timing("simulate", clock.elapsed().as_secs_f64());
    let stats = summarize(&p, &cal, &paths, s.seed, sel);
    w.write_json("stats.json", &stats)?;
    w.write_text("arrivals.csv", &io::arrivals_csv(&paths))?;
    let mut payoffs = String::from("path,payoff\n");
    for (k, path) in paths.iter().enumerate() {
        payoffs += &format!("{k},{}\n", realized_payoff(path, &p, sel));
    }
    w.write_text("payoffs.csv", &payoffs)?;
    // Path k of the ensemble replayed with its step history recorded.
    let recorder = Simulator::new(
        &p,
        &r,
        cal,
        SimulationOptions {
            record_steps: true,
            ..options
        },
    )?;
    let recorded = (0..trajectories.min(s.n_paths))
        .map(|k| recorder.path(p.start(), &mut path_rng(s.seed, k as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let indexed: Vec<(usize, &_)> = recorded.iter().enumerate().collect();
    w.write_text("trajectories.csv", &io::trajectories_csv(&indexed))?;
    Ok((w, hash, "simulate"))
}

fn run_scenario(cmd: ScenarioCommand) -> Result<Started, CliError> {
    let clock = Instant::now();
    let started = match cmd {
        ScenarioCommand::Deteriorate {
            problem,
            ensemble,
            lambda_grid,
            gamma,
            site,
        } => {
            let spec = load_spec(&problem, "table1")?;
            let s = settings(&problem, Some(&ensemble));
            let grid = lambda_grid.unwrap_or_else(scenarios::default_lambda_grid);
            let config = RunConfig {
                command: "scenario deteriorate".into(),
                problem: spec.clone(),
                settings: hashed_settings(s),
                parameters: serde_json::json!({ "lambda_grid": grid, "gamma": gamma, "site": site }),
            };
            let (mut w, hash) = start_writer(&problem.out, &config)?;
            let sweep = scenarios::deteriorate(&spec, &grid, gamma, site, &s)?;
            write_scenario(&mut w, &sweep.result)?;
            w.write_json(
                "summary.json",
                &serde_json::json!({
                    "critical_interval": sweep.critical_interval(),
                    "points": sweep.points,
                    "provenance": sweep.result.provenance,
                    "input_hash": sweep.result.input_hash,
                }),
            )?;
            (w, hash, "scenario deteriorate")
        }
        ScenarioCommand::Noise {
            problem,
            ensemble,
            amplitude_grid,
        } => {
            let spec = load_spec(&problem, "table2")?;
            let s = settings(&problem, Some(&ensemble));
            let config = RunConfig {
                command: "scenario noise".into(),
                problem: spec.clone(),
                settings: hashed_settings(s),
                parameters: serde_json::json!({ "amplitude_grid": amplitude_grid }),
            };
            let (mut w, hash) = start_writer(&problem.out, &config)?;
            let sweep = scenarios::noise_sweep(&spec, &amplitude_grid, &s)?;
            write_scenario(&mut w, &sweep.result)?;
            w.write_json(
                "summary.json",
                &serde_json::json!({
                    "spearman": sweep.spearman,
                    "points": sweep.points,
                    "provenance": sweep.result.provenance,
                    "input_hash": sweep.result.input_hash,
                }),
            )?;
            (w, hash, "scenario noise")
        }
        ScenarioCommand::Mode1 {
            problem,
            ensemble,
            partition_grid,
            h_informed,
            policy,
        } => {
            // The bundled Table-2 preset gets the triangular actual reward.
            let spec = if problem.config.is_none()
                && problem.preset.as_deref().unwrap_or("table2") == "table2"
            {
                scenarios::mode1_problem()
            } else {
                load_spec(&problem, "table2")?
            };
            let mut s = settings(&problem, Some(&ensemble));
            s.policy = policy.into();
            let config = RunConfig {
                command: "scenario mode1".into(),
                problem: spec.clone(),
                settings: hashed_settings(s),
                parameters: serde_json::json!({
                    "partition_grid": partition_grid,
                    "h_informed": h_informed,
                }),
            };
            let (mut w, hash) = start_writer(&problem.out, &config)?;
            let sweep = scenarios::mode1_sweep(&spec, &partition_grid, h_informed, &s)?;
            write_scenario(&mut w, &sweep.result)?;
            let points: Vec<_> = sweep
                .points
                .iter()
                .map(|p| {
                    serde_json::json!({
                        "partitions": p.partitions,
                        "d": p.stats.d,
                        "std_error": p.stats.std_error,
                        "var": p.stats.var,
                        "arrived": p.stats.arrived,
                        "d_given_arrival": p.stats.d_given_arrival,
                    })
                })
                .collect();
            w.write_json(
                "summary.json",
                &serde_json::json!({
                    "points": points,
                    "provenance": sweep.result.provenance,
                    "input_hash": sweep.result.input_hash,
                }),
            )?;
            (w, hash, "scenario mode1")
        }
        ScenarioCommand::Mode2 {
            problem,
            ensemble,
            t_move,
            h_informed,
            policy,
        } => {
            let spec = load_spec(&problem, "table2")?;
            let mut s = settings(&problem, Some(&ensemble));
            s.policy = policy.into();
            let t_move = t_move.unwrap_or(spec.horizon / 4.0);
            let config = RunConfig {
                command: "scenario mode2".into(),
                problem: spec.clone(),
                settings: hashed_settings(s),
                parameters: serde_json::json!({ "t_move": t_move, "h_informed": h_informed }),
            };
            let (mut w, hash) = start_writer(&problem.out, &config)?;
            let run = scenarios::mode2_run(&spec, t_move, h_informed, &s)?;
            write_scenario(&mut w, &run.result)?;
            w.write_json(
                "summary.json",
                &serde_json::json!({
                    "t_move": run.t_move,
                    "waiting_paths": run.cohorts.waiting_paths,
                    "no_waiting_paths": run.cohorts.no_waiting_paths,
                    "waiting_median": run.waiting_median,
                    "no_waiting_median": run.no_waiting_median,
                    "information_region": run.information_region,
                    "d": run.mismatch.d,
                    "var": run.mismatch.var,
                    "provenance": run.result.provenance,
                    "input_hash": run.result.input_hash,
                }),
            )?;
            (w, hash, "scenario mode2")
        }
    };
    let (mut w, hash, name) = started;
    w.record_timing("scenario", clock.elapsed().as_secs_f64());
    Ok((w, hash, name))
}

/// Runs a parsed command and returns the manifest it wrote.
pub fn run(cli: Cli) -> Result<Manifest, CliError> {
    let total = Instant::now();
    let (mut w, hash, name) = match cli.command {
        Command::Solve { problem, terminal } => run_solve(problem, terminal, false)?,
        Command::Regions { problem, terminal } => run_solve(problem, terminal, true)?,
        Command::Simulate {
            problem,
            ensemble,
            terminal,
            trajectories,
            absorbing_origin,
        } => run_simulate(problem, ensemble, terminal, trajectories, absorbing_origin)?,
        Command::Scenario(cmd) => run_scenario(cmd)?,
    };
    w.record_timing("total", total.elapsed().as_secs_f64());
    Ok(w.finish(name, &hash)?)
}
