//! End-to-end experiments: stop-over deterioration sweeps, terminal-reward
//! noise, step-function perceived rewards and a shifted green-up time.
//!
//! Each scenario takes a problem in configuration units, rewrites the parts
//! it varies, and runs solve, region extraction and a seeded ensemble per
//! sweep point. Sweep points run under the requested execution strategy and
//! are assembled in grid order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hjb::{
    solve_backward_with, Grid, HjbError, ObstacleScheme, TerminalSelector, ValueField,
};
use crate::info::{
    cohort_split, extend_with_information_regime, handoff_for, median, value_of_information,
    Cohorts, InfoError, MismatchStats, PolicySource,
};
use crate::model::{
    content_hash, validate_problem, ModelError, ProblemSpec, RegimeLabel, RewardProfile,
    ValidatedProblem,
};
use crate::parallel::{self, Execution};
use crate::presets;
use crate::regions::{default_tolerance, extract_regions, SwitchingRegions, RELATIVE_TOLERANCE};
use crate::simulate::{
    calibrate, default_sim_dx, summarize, LatticeCalibration, SimError, SimulationOptions,
    Simulator, SiteStay, Trajectory,
};

/// Default ensemble size of every scenario.
pub const DEFAULT_PATHS: usize = 500;
/// Site whose staging reward the deterioration sweep scales.
pub const DETERIORATED_SITE: usize = 2;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] HjbError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Info(#[from] InfoError),
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

/// Grid, lattice and ensemble settings shared by every sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    /// Spatial nodes; the default grid when `None`.
    pub nx: Option<usize>,
    /// Time steps; the default grid when `None`.
    pub nt: Option<usize>,
    /// Simulation cell width in model units; the PDE cell width when `None`,
    /// shrunk below the lattice feasibility limit if needed.
    pub dx_sim: Option<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: ObstacleScheme,
    /// Route into the informed regime for the information experiments.
    pub policy: PolicySource,
    pub execution: Execution,
}

impl Settings {
    pub fn new(seed: u64) -> Self {
        Settings {
            nx: None,
            nt: None,
            dx_sim: None,
            n_paths: DEFAULT_PATHS,
            seed,
            scheme: ObstacleScheme::default(),
            policy: PolicySource::default(),
            execution: Execution::default(),
        }
    }

    pub fn grid(&self, problem: &ValidatedProblem) -> Result<Grid> {
        let default = Grid::default_for(problem);
        Ok(Grid::for_problem(
            problem,
            self.nx.unwrap_or(default.nx),
            self.nt.unwrap_or(default.nt),
        )?)
    }

    pub fn sim_dx(&self, problem: &ValidatedProblem, grid: &Grid) -> f64 {
        self.dx_sim
            .unwrap_or_else(|| default_sim_dx(problem, grid.dx))
    }
}

/// Solve, regions, lattice and ensemble of one problem.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub values: ValueField,
    pub regions: SwitchingRegions,
    pub calibration: LatticeCalibration,
    pub paths: Vec<Trajectory>,
}

pub fn run_pipeline(
    problem: &ValidatedProblem,
    terminal: TerminalSelector,
    settings: &Settings,
) -> Result<Pipeline> {
    run_pipeline_with(problem, terminal, settings, SimulationOptions::default())
}

pub fn run_pipeline_with(
    problem: &ValidatedProblem,
    terminal: TerminalSelector,
    settings: &Settings,
    options: SimulationOptions,
) -> Result<Pipeline> {
    let grid = settings.grid(problem)?;
    let values = solve_backward_with(problem, &grid, terminal, settings.scheme)?;
    let regions = extract_regions(&values, default_tolerance(&values));
    let calibration = calibrate(problem, settings.sim_dx(problem, &grid))?;
    let sim = Simulator::new(problem, &regions, calibration.clone(), options)?;
    let paths = sim.ensemble(
        problem.start(),
        settings.n_paths,
        settings.seed,
        settings.execution,
    )?;
    Ok(Pipeline {
        values,
        regions,
        calibration,
        paths,
    })
}

/// A named CSV-ready series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.to_owned(),
            header: header.iter().map(|h| (*h).to_owned()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Comma-separated text with a header line. Floats use the shortest
    /// round-trip representation, so equal data always gives equal text.
    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub n_paths: usize,
    pub grid: Grid,
    pub sim_dx: f64,
    pub scheme: ObstacleScheme,
    pub policy: PolicySource,
    pub region_relative_tolerance: f64,
}

impl Provenance {
    fn new(problem: &ValidatedProblem, settings: &Settings) -> Result<Self> {
        let grid = settings.grid(problem)?;
        Ok(Provenance {
            seed: settings.seed,
            n_paths: settings.n_paths,
            grid,
            sim_dx: settings.sim_dx(problem, &grid),
            scheme: settings.scheme,
            policy: settings.policy,
            region_relative_tolerance: RELATIVE_TOLERANCE,
        })
    }
}

/// Tables of one scenario run, tagged with the hash of its input problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: String,
    pub input_hash: String,
    pub tables: Vec<Table>,
    pub provenance: Provenance,
}

fn check_grid(values: &[f64], lo: f64, hi: f64, what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(ScenarioError::Invalid(format!("empty {what} grid")));
    }
    if values.iter().any(|v| !(lo..=hi).contains(v)) {
        return Err(ScenarioError::Invalid(format!(
            "{what} values must lie in [{lo}, {hi}]"
        )));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ScenarioError::Invalid(format!(
            "{what} grid must be strictly increasing"
        )));
    }
    Ok(())
}

fn regime_index(problem: &ValidatedProblem, label: RegimeLabel) -> Result<usize> {
    problem
        .regime_with_label(label)
        .ok_or_else(|| ScenarioError::Invalid(format!("problem has no {} regime", label.as_str())))
}

/// `0, 0.05, ..., 1`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=20).map(|k| k as f64 / 20.0).collect()
}

/// Terminal reward peaking `gamma * T * lambda` before `T/2`, width `T/4`.
pub fn shifted_terminal(horizon: f64, gamma: f64, lambda: f64) -> RewardProfile {
    RewardProfile::gaussian(horizon / 2.0 - gamma * horizon * lambda, horizon / 4.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeteriorationPoint {
    pub lambda: f64,
    pub v0: f64,
    /// Detour-to-waiting switching nodes inside each site, in site order.
    pub waiting_region: Vec<usize>,
    pub stays: Vec<SiteStay>,
    pub payoff_mean: f64,
    pub arrival_fraction: f64,
}

impl DeteriorationPoint {
    pub fn stay_at(&self, site: usize) -> f64 {
        self.stays
            .iter()
            .find(|s| s.site == site)
            .map_or(0.0, |s| s.mean_length)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeteriorationSweep {
    pub gamma: f64,
    pub site: usize,
    pub sites: Vec<usize>,
    pub points: Vec<DeteriorationPoint>,
    pub result: ScenarioResult,
}

impl DeteriorationSweep {
    fn region_at(&self, k: usize) -> usize {
        let pos = self.sites.iter().position(|&s| s == self.site).unwrap_or(0);
        self.points[k].waiting_region[pos]
    }

    /// `[last lambda with a nonempty waiting region at the site, first lambda
    /// with an empty one]`; `None` when the region is empty from the start or
    /// never empties.
    pub fn critical_interval(&self) -> Option<(f64, f64)> {
        let k = (0..self.points.len()).find(|&k| self.region_at(k) == 0)?;
        (k > 0).then(|| (self.points[k - 1].lambda, self.points[k].lambda))
    }

    /// First index from which every consecutive change of `V(0,0)` is below
    /// `tol` in magnitude.
    pub fn flat_onset(&self, tol: f64) -> usize {
        let v: Vec<f64> = self.points.iter().map(|p| p.v0).collect();
        let mut k = v.len() - 1;
        while k > 0 && (v[k] - v[k - 1]).abs() < tol {
            k -= 1;
        }
        k
    }
}

/// Scales the staging reward of `site` by `1 - lambda` over `lambda_grid`.
/// With `gamma > 0` both terminal rewards become [`shifted_terminal`].
pub fn deteriorate(
    spec: &ProblemSpec,
    lambda_grid: &[f64],
    gamma: f64,
    site: usize,
    settings: &Settings,
) -> Result<DeteriorationSweep> {
    check_grid(lambda_grid, 0.0, 1.0, "lambda")?;
    if !(0.0..=0.5).contains(&gamma) {
        return Err(ScenarioError::Invalid("gamma must lie in [0, 1/2]".into()));
    }
    let base = validate_problem(spec)?;
    let pos = spec
        .sites
        .iter()
        .position(|s| s.index == site)
        .ok_or(ModelError::UnknownSite(site))?;
    let detour = regime_index(&base, RegimeLabel::Detour)?;
    let waiting = base.waiting_regime();
    let horizon = spec.horizon;

    let points = parallel::map_slice(settings.execution, lambda_grid, |&lambda| {
        let mut s = spec.clone();
        s.sites[pos].staging_reward *= 1.0 - lambda;
        if gamma > 0.0 {
            s.terminal_perceived = shifted_terminal(horizon, gamma, lambda);
            s.terminal_actual = s.terminal_perceived.clone();
        }
        let problem = validate_problem(&s)?;
        let run = run_pipeline(&problem, TerminalSelector::Model, settings)?;
        let stats = summarize(
            &problem,
            &run.calibration,
            &run.paths,
            settings.seed,
            TerminalSelector::Model,
        );
        Ok(DeteriorationPoint {
            lambda,
            v0: run.values.start_value(),
            waiting_region: problem
                .sites()
                .iter()
                .map(|st| {
                    run.regions
                        .count_within(detour, waiting, st.start, st.end())
                })
                .collect(),
            stays: stats.stays,
            payoff_mean: stats.payoff_mean,
            arrival_fraction: stats.arrival_fraction,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let sites: Vec<usize> = base.sites().iter().map(|s| s.index).collect();
    let site_cols: Vec<String> = sites.iter().map(|s| format!("site{s}")).collect();
    let header = |prefix: &str| -> Vec<String> {
        std::iter::once("lambda".to_owned())
            .chain(site_cols.iter().map(|c| format!("{prefix}{c}")))
            .collect()
    };
    let mut value = Table::new(
        "value_vs_lambda",
        &["lambda", "v0", "payoff_mean", "arrival_fraction"],
    );
    let mut stay = Table {
        name: "stay_vs_lambda".into(),
        header: header("stay_"),
        rows: Vec::new(),
    };
    let mut region = Table {
        name: "region_vs_lambda".into(),
        header: header("nodes_"),
        rows: Vec::new(),
    };
    for p in &points {
        value.push(vec![p.lambda, p.v0, p.payoff_mean, p.arrival_fraction]);
        stay.push(
            std::iter::once(p.lambda)
                .chain(sites.iter().map(|&s| p.stay_at(s)))
                .collect(),
        );
        region.push(
            std::iter::once(p.lambda)
                .chain(p.waiting_region.iter().map(|&c| c as f64))
                .collect(),
        );
    }
    Ok(DeteriorationSweep {
        gamma,
        site,
        sites,
        points,
        result: ScenarioResult {
            scenario: "deteriorate".into(),
            input_hash: content_hash(spec),
            tables: vec![value, stay, region],
            provenance: Provenance::new(&base, settings)?,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub amplitude: f64,
    pub d: f64,
    pub var: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweep {
    pub points: Vec<NoisePoint>,
    /// Rank correlation of `Var` with the amplitude.
    pub spearman: f64,
    pub result: ScenarioResult,
}

/// Solves once with the perceived reward `g` and re-scores the same
/// ensemble against `G = g + A kappa` for every amplitude.
pub fn noise_sweep(
    spec: &ProblemSpec,
    amplitudes: &[f64],
    settings: &Settings,
) -> Result<NoiseSweep> {
    check_grid(amplitudes, 0.0, 1.0, "amplitude")?;
    let problem = validate_problem(spec)?;
    let run = run_pipeline(&problem, TerminalSelector::Perceived, settings)?;
    let points = parallel::map_slice(settings.execution, amplitudes, |&a| {
        let mut s = problem.spec().clone();
        s.terminal_actual = RewardProfile::noisy(s.terminal_perceived.clone(), a);
        let scored = ValidatedProblem::with_spec(s)?;
        let m = value_of_information(&scored, &run.paths)?;
        Ok(NoisePoint {
            amplitude: a,
            d: m.d,
            var: m.var,
            std_error: m.std_error,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = points.iter().map(|p| p.amplitude).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.var).collect();
    let mut table = Table::new("var_vs_amplitude", &["amplitude", "d", "var", "std_error"]);
    for p in &points {
        table.push(vec![p.amplitude, p.d, p.var, p.std_error]);
    }
    Ok(NoiseSweep {
        spearman: spearman(&xs, &ys),
        points,
        result: ScenarioResult {
            scenario: "noise".into(),
            input_hash: content_hash(spec),
            tables: vec![table],
            provenance: Provenance::new(&problem, settings)?,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode1Point {
    pub partitions: usize,
    pub stats: MismatchStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode1Sweep {
    pub points: Vec<Mode1Point>,
    pub result: ScenarioResult,
}

/// Four-regime system whose regimes 0-2 know only `g`, with an informed
/// detour bought at the stop-over for `h_informed`.
pub fn informed_pipeline(
    spec: &ProblemSpec,
    h_informed: f64,
    settings: &Settings,
) -> Result<(ValidatedProblem, Pipeline)> {
    let base = validate_problem(spec)?;
    let problem = extend_with_information_regime(&base, h_informed)?;
    let options = SimulationOptions {
        handoff: handoff_for(&problem, settings.policy)?,
        ..SimulationOptions::default()
    };
    let run = run_pipeline_with(&problem, TerminalSelector::Model, settings, options)?;
    Ok((problem, run))
}

/// For each `n`, the perceived reward is the projection of the actual reward
/// onto step functions over `n` equal cells of `[0, T]`.
pub fn mode1_sweep(
    spec: &ProblemSpec,
    partitions: &[usize],
    h_informed: f64,
    settings: &Settings,
) -> Result<Mode1Sweep> {
    if partitions.is_empty() || partitions.contains(&0) {
        return Err(ScenarioError::Invalid(
            "partition counts must be at least 1".into(),
        ));
    }
    let points = parallel::map_slice(settings.execution, partitions, |&n| {
        let mut s = spec.clone();
        s.terminal_perceived = RewardProfile::step_projection(s.terminal_actual.clone(), n);
        let (problem, run) = informed_pipeline(&s, h_informed, settings)?;
        Ok(Mode1Point {
            partitions: n,
            stats: value_of_information(&problem, &run.paths)?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut table = Table::new(
        "d_vs_partitions",
        &["partitions", "d", "std_error", "var", "arrived"],
    );
    for p in &points {
        table.push(vec![
            p.partitions as f64,
            p.stats.d,
            p.stats.std_error,
            p.stats.var,
            p.stats.arrived as f64,
        ]);
    }
    let base = validate_problem(spec)?;
    Ok(Mode1Sweep {
        points,
        result: ScenarioResult {
            scenario: "mode1".into(),
            input_hash: content_hash(spec),
            tables: vec![table],
            provenance: Provenance::new(&base, settings)?,
        },
    })
}

/// The `table2` preset with the triangular actual reward of the step-projection
/// experiment.
pub fn mode1_problem() -> ProblemSpec {
    let mut s = presets::table2();
    s.terminal_actual = presets::mode1_actual(s.horizon);
    s.terminal_perceived = s.terminal_actual.clone();
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode2Run {
    pub t_move: f64,
    pub cohorts: Cohorts,
    pub waiting_median: Option<f64>,
    pub no_waiting_median: Option<f64>,
    /// Waiting-to-informed switching nodes.
    pub information_region: usize,
    pub mismatch: MismatchStats,
    pub result: ScenarioResult,
}

/// Perceived reward `g` kept as configured, actual reward `G(t) = g(t + t_move)`
/// peaking `t_move` earlier.
pub fn mode2_run(
    spec: &ProblemSpec,
    t_move: f64,
    h_informed: f64,
    settings: &Settings,
) -> Result<Mode2Run> {
    if !(0.0..spec.horizon).contains(&t_move) {
        return Err(ScenarioError::Invalid("t_move must lie in [0, T)".into()));
    }
    let mut s = spec.clone();
    s.terminal_actual = RewardProfile::shifted(s.terminal_perceived.clone(), t_move);
    let (problem, run) = informed_pipeline(&s, h_informed, settings)?;
    let cohorts = cohort_split(&problem, &run.paths)?;
    let waiting = problem.waiting_regime();
    let informed = regime_index(&problem, RegimeLabel::InformedDetour)?;
    let mut table = Table::new("cohort_arrivals", &["waited", "arrival_time"]);
    for &t in &cohorts.waiting {
        table.push(vec![1.0, t]);
    }
    for &t in &cohorts.no_waiting {
        table.push(vec![0.0, t]);
    }
    Ok(Mode2Run {
        t_move,
        waiting_median: median(&cohorts.waiting),
        no_waiting_median: median(&cohorts.no_waiting),
        information_region: run.regions.count(waiting, informed),
        mismatch: value_of_information(&problem, &run.paths)?,
        cohorts,
        result: ScenarioResult {
            scenario: "mode2".into(),
            input_hash: content_hash(&s),
            tables: vec![table],
            provenance: Provenance::new(&problem, settings)?,
        },
    })
}

/// Spearman rank correlation with average ranks for ties. `NaN` when either
/// sample is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = ranks(xs);
    let ry = ranks(ys);
    pearson(&rx, &ry)
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut e = k;
        while e + 1 < idx.len() && xs[idx[e + 1]] == xs[idx[k]] {
            e += 1;
        }
        let rank = 0.5 * (k + e) as f64 + 1.0;
        for &i in &idx[k..=e] {
            out[i] = rank;
        }
        k = e + 1;
    }
    out
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}
