//! Controlled random walk on a space lattice, driven by a switching policy.
//!
//! Each regime moves one lattice cell left or right, or stays, with
//! probabilities that reproduce the drift and diffusion of the continuous
//! model over one time step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hjb::{Grid, SwitchTable, TerminalSelector};
use crate::model::{StartState, ValidatedProblem};
use crate::parallel::{self, Execution};
use crate::regions::{Action, SwitchingRegions};

/// Safety margin when counting the number of steps in the horizon.
const STEP_COUNT_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(
        "regime {regime}: left-move probability {p_left:.4} is negative; drift dominates \
         diffusion at dx = {dx}; use dx < 2*mu/v = {limit} or rescale units"
    )]
    NegativeProbability {
        regime: usize,
        p_left: f64,
        dx: f64,
        limit: f64,
    },
    #[error("regime {regime}: move probabilities sum to {total} > 1")]
    Overdispersed { regime: usize, total: f64 },
    #[error("invalid simulation lattice: {0}")]
    InvalidLattice(String),
    #[error("start state outside the domain or horizon")]
    InvalidStart,
    #[error("policy grid does not match the problem")]
    PolicyMismatch,
    #[error("handoff switch is not feasible at its site")]
    InvalidHandoff,
}

/// One-step move probabilities of a single regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionProbs {
    pub left: f64,
    pub right: f64,
    pub stay: f64,
}

impl TransitionProbs {
    pub const STAY: TransitionProbs = TransitionProbs {
        left: 0.0,
        right: 0.0,
        stay: 1.0,
    };

    /// Draws a move in `{-1, 0, 1}`. Stationary regimes consume no randomness.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i8 {
        if self.stay >= 1.0 {
            return 0;
        }
        let u: f64 = rng.random();
        if u < self.left {
            -1
        } else if u < self.left + self.right {
            1
        } else {
            0
        }
    }

    pub fn mean_step(&self, dx: f64) -> f64 {
        (self.right - self.left) * dx
    }

    pub fn variance_step(&self, dx: f64) -> f64 {
        let m = self.right - self.left;
        (self.right + self.left - m * m) * dx * dx
    }
}

/// Probabilities for drift `v`, diffusion `mu`, cell `dx` and normalising
/// scale `scale`, with time step `dx^2 / scale`:
/// `left = mu/scale - v dx/(2 scale)`, `right = mu/scale + v dx/(2 scale)`.
///
/// A regime with no diffusion moves right with probability `v dt / dx`.
pub fn transition_probs(
    regime: usize,
    drift: f64,
    diffusion: f64,
    dx: f64,
    scale: f64,
) -> Result<TransitionProbs, SimError> {
    if drift == 0.0 && diffusion == 0.0 {
        return Ok(TransitionProbs::STAY);
    }
    let half_drift = drift * dx / (2.0 * scale);
    let (left, right) = if diffusion == 0.0 {
        (0.0, 2.0 * half_drift)
    } else {
        (
            diffusion / scale - half_drift,
            diffusion / scale + half_drift,
        )
    };
    if left < 0.0 {
        return Err(SimError::NegativeProbability {
            regime,
            p_left: left,
            dx,
            limit: 2.0 * diffusion / drift,
        });
    }
    let total = left + right;
    if total > 1.0 + 1e-12 {
        return Err(SimError::Overdispersed { regime, total });
    }
    Ok(TransitionProbs {
        left,
        right,
        stay: (1.0 - total).max(0.0),
    })
}

/// Lattice matching a problem: `cells` cells of width `dx` covering `[0, L]`,
/// time step `dt = dx^2 / scale` and per-regime move probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeCalibration {
    pub dx: f64,
    pub dt: f64,
    pub scale: f64,
    pub cells: usize,
    pub probs: Vec<TransitionProbs>,
}

/// Calibrates the lattice for a requested cell width. The width is shrunk so
/// that `L` is a whole number of cells.
///
/// The scale is `max(sum mu, 2 max mu)`: the sum alone can leave the most
/// diffusive regime with move probabilities above one. Without any diffusion
/// the scale is `dx * max v`, so the fastest regime advances every step.
pub fn calibrate(problem: &ValidatedProblem, dx: f64) -> Result<LatticeCalibration, SimError> {
    if !(dx > 0.0 && dx <= problem.length()) {
        return Err(SimError::InvalidLattice(format!("dx = {dx}")));
    }
    let cells = (problem.length() / dx - STEP_COUNT_SLACK).ceil().max(1.0) as usize;
    let dx = problem.length() / cells as f64;
    let regimes = problem.regimes();
    let sum_mu: f64 = regimes.iter().map(|r| r.diffusion).sum();
    let max_mu = regimes.iter().map(|r| r.diffusion).fold(0.0, f64::max);
    let max_v = regimes.iter().map(|r| r.drift).fold(0.0, f64::max);
    let mut scale = sum_mu.max(2.0 * max_mu);
    if scale == 0.0 {
        scale = dx * max_v;
    }
    if scale == 0.0 {
        return Err(SimError::InvalidLattice("no regime ever moves".into()));
    }
    let probs = regimes
        .iter()
        .enumerate()
        .map(|(i, r)| transition_probs(i, r.drift, r.diffusion, dx, scale))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LatticeCalibration {
        dx,
        dt: dx * dx / scale,
        scale,
        cells,
        probs,
    })
}

/// Largest cell width keeping every left-move probability nonnegative,
/// `min 2 mu / v` over diffusive regimes with positive drift.
pub fn max_feasible_dx(problem: &ValidatedProblem) -> Option<f64> {
    problem
        .regimes()
        .iter()
        .filter(|r| r.diffusion > 0.0 && r.drift > 0.0)
        .map(|r| 2.0 * r.diffusion / r.drift)
        .reduce(f64::min)
}

/// `preferred` when it is feasible, otherwise `DX_MARGIN` times the
/// feasibility limit.
pub fn default_sim_dx(problem: &ValidatedProblem, preferred: f64) -> f64 {
    match max_feasible_dx(problem) {
        Some(limit) if preferred >= limit => DX_MARGIN * limit,
        _ => preferred,
    }
}

/// Fraction of the feasibility limit used when the preferred width is too
/// coarse.
pub const DX_MARGIN: f64 = 0.97;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Arrived {
        time: f64,
    },
    /// Horizon reached before arrival.
    Expired,
    /// Left the domain through an absorbing origin.
    Absorbed {
        time: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub time: f64,
    pub position: f64,
    pub from: usize,
    pub to: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub time: f64,
    pub position: f64,
    pub regime: usize,
    /// Accumulated mortality `int beta dt` up to this step.
    pub discount_log: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: StartState,
    /// Per-step record; empty unless requested.
    pub steps: Vec<PathStep>,
    pub switches: Vec<SwitchEvent>,
    pub outcome: Outcome,
    pub final_regime: usize,
    /// `int beta dt` at termination.
    pub discount_log: f64,
    /// Discounted running reward collected along the path.
    pub running_value: f64,
    /// Discounted switching costs paid along the path.
    pub switch_cost_value: f64,
    /// Days spent in the waiting regime inside each site, in site order.
    pub site_stays: Vec<f64>,
    /// Time of the first step inside each site, or `None`.
    pub first_visit: Vec<Option<f64>>,
}

impl Trajectory {
    pub fn arrival_time(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Arrived { time } => Some(time),
            _ => None,
        }
    }

    /// `exp(-int beta dt)` at termination.
    pub fn survival(&self) -> f64 {
        (-self.discount_log).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SimulationOptions {
    /// Kill paths that step below `x = 0` instead of reflecting them.
    pub absorbing_origin: bool,
    pub record_steps: bool,
    /// Forced regime change overriding the policy; see [`Handoff`].
    pub handoff: Option<Handoff>,
}

/// A path that has spent one lattice step in regime `from` inside site
/// `site` switches to regime `to`, paying the switching cost there, whatever
/// the policy says.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handoff {
    pub from: usize,
    pub to: usize,
    /// Index into the problem's site list.
    pub site: usize,
}

/// Precomputed lattice tables shared by every path of an ensemble.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    problem: &'a ValidatedProblem,
    regions: &'a SwitchingRegions,
    calibration: LatticeCalibration,
    options: SimulationOptions,
    table: SwitchTable,
    /// `running[i][k]` at lattice node `k`.
    running: Vec<Vec<f64>>,
    /// Position in `problem.sites()` of the site containing node `k`.
    site_of: Vec<Option<usize>>,
    /// PDE node nearest to each lattice node.
    policy_node: Vec<usize>,
    step_survival: Vec<f64>,
}

impl<'a> Simulator<'a> {
    pub fn new(
        problem: &'a ValidatedProblem,
        regions: &'a SwitchingRegions,
        calibration: LatticeCalibration,
        options: SimulationOptions,
    ) -> Result<Self, SimError> {
        let grid: &Grid = regions.grid();
        if regions.n_regimes() != problem.n_regimes()
            || (grid.length - problem.length()).abs() > 1e-9 * problem.length()
            || (grid.horizon - problem.horizon()).abs() > 1e-9 * problem.horizon()
        {
            return Err(SimError::PolicyMismatch);
        }
        if let Some(h) = options.handoff {
            let site = problem
                .sites()
                .get(h.site)
                .ok_or(SimError::InvalidHandoff)?;
            let x = site.start + 0.5 * site.width;
            if h.from == h.to
                || h.to >= problem.n_regimes()
                || problem.switch_cost(h.from, h.to, 0.0, x).is_none()
            {
                return Err(SimError::InvalidHandoff);
            }
        }
        let cal = &calibration;
        let x_of = |k: usize| {
            if k == cal.cells {
                problem.length()
            } else {
                k as f64 * cal.dx
            }
        };
        let nodes = cal.cells + 1;
        let running = (0..problem.n_regimes())
            .map(|i| {
                (0..nodes)
                    .map(|k| problem.eval_running(i, 0.0, x_of(k)))
                    .collect()
            })
            .collect();
        let site_of = (0..nodes)
            .map(|k| {
                let x = x_of(k);
                problem.sites().iter().position(|s| s.contains(x))
            })
            .collect();
        let policy_node = (0..nodes).map(|k| grid.nearest_node(x_of(k))).collect();
        let step_survival = problem
            .regimes()
            .iter()
            .map(|r| (-r.mortality * cal.dt).exp())
            .collect();
        Ok(Simulator {
            problem,
            regions,
            table: SwitchTable::build(problem, grid),
            calibration,
            options,
            running,
            site_of,
            policy_node,
            step_survival,
        })
    }

    pub fn calibration(&self) -> &LatticeCalibration {
        &self.calibration
    }

    pub fn problem(&self) -> &ValidatedProblem {
        self.problem
    }

    fn position(&self, k: usize) -> f64 {
        if k == self.calibration.cells {
            self.problem.length()
        } else {
            k as f64 * self.calibration.dx
        }
    }

    /// Simulates one path from `start` until arrival, absorption or the
    /// horizon.
    pub fn path<R: Rng + ?Sized>(
        &self,
        start: StartState,
        rng: &mut R,
    ) -> Result<Trajectory, SimError> {
        let p = self.problem;
        let cal = &self.calibration;
        let horizon = p.horizon();
        if !(0.0..=horizon).contains(&start.time)
            || !(0.0..=p.length()).contains(&start.position)
            || start.regime >= p.n_regimes()
        {
            return Err(SimError::InvalidStart);
        }
        let grid = self.regions.grid();
        let n_steps = ((horizon - start.time) / cal.dt + STEP_COUNT_SLACK).floor() as usize;
        let n_sites = p.sites().len();

        let mut k = ((start.position / cal.dx).round() as usize).min(cal.cells);
        let mut regime = start.regime;
        let mut survival = 1.0;
        let mut discount_log = 0.0;
        let mut running_value = 0.0;
        let mut switch_cost_value = 0.0;
        let mut switches = Vec::new();
        let mut steps = Vec::new();
        let mut site_stays = vec![0.0; n_sites];
        let mut first_visit = vec![None; n_sites];
        let mut outcome = Outcome::Expired;
        let mut handoff_ready = false;

        for s in 0..=n_steps {
            let t = start.time + s as f64 * cal.dt;
            if let Some(site) = self.site_of[k] {
                first_visit[site].get_or_insert(t);
            }
            if k == cal.cells {
                outcome = Outcome::Arrived { time: t };
                break;
            }
            if s == n_steps {
                break;
            }
            let n = self.policy_node[k];
            let forced = self
                .options
                .handoff
                .filter(|h| handoff_ready && regime == h.from && self.site_of[k] == Some(h.site));
            let action = match forced {
                Some(h) => Action::Switch(h.to),
                None => self.regions.action_at(grid.nearest_step(t), n, regime),
            };
            if let Action::Switch(j) = action {
                let cost = match (self.table.cost(n, regime, j), forced) {
                    (Some(c), _) => c,
                    (None, Some(_)) => return Err(SimError::InvalidHandoff),
                    (None, None) => {
                        unreachable!("switching regions only contain feasible switches")
                    }
                };
                switch_cost_value += survival * cost;
                switches.push(SwitchEvent {
                    time: t,
                    position: self.position(k),
                    from: regime,
                    to: j,
                    cost,
                });
                regime = j;
            }
            if self.options.record_steps {
                steps.push(PathStep {
                    time: t,
                    position: self.position(k),
                    regime,
                    discount_log,
                });
            }
            if let Some(h) = self.options.handoff {
                handoff_ready = regime == h.from && self.site_of[k] == Some(h.site);
            }
            running_value += survival * self.running[regime][k] * cal.dt;
            if regime == p.waiting_regime() {
                if let Some(site) = self.site_of[k] {
                    site_stays[site] += cal.dt;
                }
            }
            survival *= self.step_survival[regime];
            discount_log += p.regime(regime).mortality * cal.dt;
            match cal.probs[regime].sample(rng) {
                -1 if k == 0 => {
                    if self.options.absorbing_origin {
                        outcome = Outcome::Absorbed { time: t + cal.dt };
                        break;
                    }
                    k = 1;
                }
                -1 => k -= 1,
                1 => k += 1,
                _ => {}
            }
        }

        Ok(Trajectory {
            start,
            steps,
            switches,
            outcome,
            final_regime: regime,
            discount_log,
            running_value,
            switch_cost_value,
            site_stays,
            first_visit,
        })
    }

    /// Runs `n_paths` independent paths. Path `k` draws from a ChaCha8 stream
    /// keyed by `(seed, k)`, so results do not depend on the execution
    /// strategy or on thread scheduling.
    pub fn ensemble(
        &self,
        start: StartState,
        n_paths: usize,
        seed: u64,
        execution: Execution,
    ) -> Result<Vec<Trajectory>, SimError> {
        parallel::map_indexed(execution, n_paths, |k| {
            let mut rng = path_rng(seed, k as u64);
            self.path(start, &mut rng)
        })
        .into_iter()
        .collect()
    }
}

/// Deterministic random stream for path `index` of an ensemble.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Realised discounted payoff of a path under a terminal selector. Expired and
/// absorbed paths collect no terminal reward.
pub fn realized_payoff(
    path: &Trajectory,
    problem: &ValidatedProblem,
    terminal: TerminalSelector,
) -> f64 {
    let mut total = path.running_value - path.switch_cost_value;
    if let Outcome::Arrived { time } = path.outcome {
        let g = terminal.profile(problem, path.final_regime);
        total += path.survival() * g.value_at(time, problem.horizon());
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteStay {
    pub site: usize,
    /// Mean waiting time over paths that waited there at all.
    pub mean_length: f64,
    pub stayers: usize,
}

/// Mean length of stay per site. A site where no path waited reports zero.
pub fn length_of_stay(problem: &ValidatedProblem, paths: &[Trajectory]) -> Vec<SiteStay> {
    problem
        .sites()
        .iter()
        .enumerate()
        .map(|(pos, site)| {
            let stays: Vec<f64> = paths
                .iter()
                .map(|p| p.site_stays[pos])
                .filter(|&d| d > 0.0)
                .collect();
            SiteStay {
                site: site.index,
                mean_length: if stays.is_empty() {
                    0.0
                } else {
                    stays.iter().sum::<f64>() / stays.len() as f64
                },
                stayers: stays.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n_paths: usize,
    pub seed: u64,
    pub arrived: usize,
    pub arrival_fraction: f64,
    pub mean_arrival_time: Option<f64>,
    pub payoff_mean: f64,
    pub payoff_variance: f64,
    pub payoff_std_error: f64,
    pub stays: Vec<SiteStay>,
    pub calibration: LatticeCalibration,
}

pub fn summarize(
    problem: &ValidatedProblem,
    calibration: &LatticeCalibration,
    paths: &[Trajectory],
    seed: u64,
    terminal: TerminalSelector,
) -> EnsembleStats {
    let n = paths.len();
    let payoffs: Vec<f64> = paths
        .iter()
        .map(|p| realized_payoff(p, problem, terminal))
        .collect();
    let (mean, var) = mean_variance(&payoffs);
    let arrivals: Vec<f64> = paths.iter().filter_map(Trajectory::arrival_time).collect();
    EnsembleStats {
        n_paths: n,
        seed,
        arrived: arrivals.len(),
        arrival_fraction: if n == 0 {
            0.0
        } else {
            arrivals.len() as f64 / n as f64
        },
        mean_arrival_time: (!arrivals.is_empty())
            .then(|| arrivals.iter().sum::<f64>() / arrivals.len() as f64),
        payoff_mean: mean,
        payoff_variance: var,
        payoff_std_error: if n > 1 {
            (var / n as f64).sqrt()
        } else {
            f64::NAN
        },
        stays: length_of_stay(problem, paths),
        calibration: calibration.clone(),
    }
}

/// Sample mean and unbiased sample variance.
pub fn mean_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, ss / (n - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjb::solve_backward;
    use crate::model::{validate_problem, ProblemSpec};
    use crate::presets;
    use crate::regions::{default_tolerance, extract_regions};
    use approx::assert_relative_eq;

    #[test]
    fn transition_probs_example() {
        let p = transition_probs(0, 1.0, 0.5, 0.1, 1.5).unwrap();
        assert_relative_eq!(p.left, 0.3, epsilon = 1e-12);
        assert_relative_eq!(p.right, 0.5 / 1.5 + 0.05 / 1.5, epsilon = 1e-12);
        assert_relative_eq!(p.stay, 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(p.left + p.right + p.stay, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn drift_dominated_cell_is_rejected() {
        let err = transition_probs(0, 10.0, 0.1, 0.1, 1.0).unwrap_err();
        assert!(matches!(err, SimError::NegativeProbability { .. }));
        assert!(err.to_string().contains("rescale"));
    }

    fn toy(mus: [f64; 3], v1: f64) -> ValidatedProblem {
        let mut spec: ProblemSpec = presets::table2();
        spec.units = Default::default();
        spec.length = 1.0;
        spec.sites = vec![];
        spec.stopover = None;
        spec.costs = crate::model::SwitchingCosts::uniform(3, 0.05);
        spec.costs.feasibility[1] = vec![
            crate::model::Feasibility::Never,
            crate::model::Feasibility::Everywhere,
            crate::model::Feasibility::Never,
        ];
        for (r, mu) in spec.regimes.iter_mut().zip(mus) {
            r.diffusion = mu;
        }
        spec.regimes[0].drift = v1;
        spec.regimes[1].drift = 0.5;
        validate_problem(&spec).unwrap()
    }

    #[test]
    fn calibration_uses_largest_admissible_scale() {
        let p = toy([0.5, 1.0, 0.0], 1.0);
        let cal = calibrate(&p, 0.1).unwrap();
        assert_relative_eq!(cal.scale, 2.0);
        assert_relative_eq!(cal.dt, 0.005, epsilon = 1e-15);
        assert_relative_eq!(cal.probs[0].left, 0.225, epsilon = 1e-12);
        assert_relative_eq!(cal.probs[0].right, 0.275, epsilon = 1e-12);
        assert_relative_eq!(cal.probs[0].stay, 0.5, epsilon = 1e-12);
        assert_eq!(cal.probs[2], TransitionProbs::STAY);
        for pr in &cal.probs {
            assert!(pr.left >= 0.0 && pr.right >= 0.0 && pr.stay >= 0.0);
            assert_relative_eq!(pr.left + pr.right + pr.stay, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn pure_drift_moves_right_at_rate() {
        let p = toy([0.0, 0.5, 0.0], 1.0);
        let cal = calibrate(&p, 0.1).unwrap();
        assert_eq!(cal.probs[0].left, 0.0);
        assert_relative_eq!(cal.probs[0].right, 1.0 * cal.dt / cal.dx, epsilon = 1e-12);
    }

    #[test]
    fn moments_match_over_many_steps() {
        let p = toy([0.5, 1.0, 0.0], 1.0);
        let cal = calibrate(&p, 0.1).unwrap();
        let pr = cal.probs[0];
        let mut rng = path_rng(7, 0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| pr.sample(&mut rng) as f64 * cal.dx)
            .collect();
        let (mean, var) = mean_variance(&xs);
        let mu_exact = 1.0 * cal.dt;
        let var_exact = 2.0 * 0.5 * cal.dt - mu_exact * mu_exact;
        assert_relative_eq!(pr.mean_step(cal.dx), mu_exact, epsilon = 1e-15);
        assert_relative_eq!(pr.variance_step(cal.dx), var_exact, epsilon = 1e-15);
        assert!((mean - mu_exact).abs() < 4.0 * (var_exact / n as f64).sqrt());
        assert!((var - var_exact).abs() < 0.02 * var_exact);
    }

    fn table2_setup() -> (ValidatedProblem, SwitchingRegions) {
        let p = validate_problem(&presets::table2()).unwrap();
        let grid = Grid::for_problem(&p, 101, 350).unwrap();
        let v = solve_backward(&p, &grid, TerminalSelector::Model).unwrap();
        let r = extract_regions(&v, default_tolerance(&v));
        (p, r)
    }

    #[test]
    fn seeded_ensembles_are_reproducible() {
        let (p, r) = table2_setup();
        let cal = calibrate(&p, p.length() / 100.0).unwrap();
        let sim = Simulator::new(&p, &r, cal, SimulationOptions::default()).unwrap();
        let a = sim
            .ensemble(p.start(), 64, 11, Execution::Sequential)
            .unwrap();
        let b = sim
            .ensemble(p.start(), 64, 11, Execution::Parallel)
            .unwrap();
        assert_eq!(a, b);
        let c = sim
            .ensemble(p.start(), 64, 12, Execution::Sequential)
            .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn path_invariants() {
        let (p, r) = table2_setup();
        let cal = calibrate(&p, p.length() / 100.0).unwrap();
        let opts = SimulationOptions {
            record_steps: true,
            ..Default::default()
        };
        let sim = Simulator::new(&p, &r, cal, opts).unwrap();
        for path in sim
            .ensemble(p.start(), 32, 3, Execution::Sequential)
            .unwrap()
        {
            for w in path.steps.windows(2) {
                assert!(w[1].discount_log >= w[0].discount_log);
                assert!(w[1].position >= 0.0 && w[1].position <= p.length());
            }
            for w in path.switches.windows(2) {
                assert!(w[1].time > w[0].time);
            }
            for s in &path.switches {
                assert_ne!(s.from, 1, "direct flight never switches");
            }
            if let Some(t) = path.arrival_time() {
                assert!(t <= p.horizon() + 1e-9);
            }
        }
    }

    #[test]
    fn stay_lengths_ignore_non_stayers() {
        let (p, r) = table2_setup();
        let cal = calibrate(&p, p.length() / 100.0).unwrap();
        let sim = Simulator::new(&p, &r, cal, SimulationOptions::default()).unwrap();
        let mut paths = sim
            .ensemble(p.start(), 4, 1, Execution::Sequential)
            .unwrap();
        for (k, path) in paths.iter_mut().enumerate() {
            path.site_stays = vec![0.0, if k < 2 { 2.0 + k as f64 } else { 0.0 }];
        }
        let stays = length_of_stay(&p, &paths);
        assert_eq!(stays[0].mean_length, 0.0);
        assert_eq!(stays[0].stayers, 0);
        assert_relative_eq!(stays[1].mean_length, 2.5);
    }
}
