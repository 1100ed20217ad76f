//! Partial-information experiments: policies built from the perceived
//! terminal reward `g`, scored against the actual reward `G`, and the
//! information-acquisition regime available at the stop-over.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hjb::{solve_backward, Grid, HjbError, TerminalSelector, ValueField};
use crate::model::{
    Feasibility, ModelError, RegimeLabel, RunningReward, TerminalSource, ValidatedProblem,
};
use crate::regions::{default_tolerance, extract_regions, SwitchingRegions};
use crate::simulate::{realized_payoff, Handoff, Trajectory};

#[derive(Debug, Error)]
pub enum InfoError {
    #[error("no stop-over site designated")]
    NoStopover,
    #[error("problem has no detour regime to copy")]
    NoDetour,
    #[error("problem already has an informed regime")]
    AlreadyExtended,
    #[error("problem has no informed regime")]
    NotExtended,
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] HjbError),
}

/// Value field and regions of a policy that only knows `g`.
#[derive(Debug, Clone)]
pub struct PartialSolve {
    pub values: ValueField,
    pub regions: SwitchingRegions,
}

/// Solves with every regime paid the perceived reward `g`.
pub fn solve_partial(problem: &ValidatedProblem, grid: &Grid) -> Result<PartialSolve, InfoError> {
    solve_with(problem, grid, TerminalSelector::Perceived)
}

/// Solves with the per-regime terminal choice of the problem, as used by the
/// informed-regime system.
pub fn solve_with(
    problem: &ValidatedProblem,
    grid: &Grid,
    terminal: TerminalSelector,
) -> Result<PartialSolve, InfoError> {
    let values = solve_backward(problem, grid, terminal)?;
    let regions = extract_regions(&values, default_tolerance(&values));
    Ok(PartialSolve { values, regions })
}

/// Discounted mismatch between perceived and actual terminal rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchStats {
    pub n_paths: usize,
    pub arrived: usize,
    /// Mean of the per-path samples over all paths.
    pub d: f64,
    /// Population variance of the per-path samples.
    pub var: f64,
    /// Standard error of `d`.
    pub std_error: f64,
    /// Mean over arriving paths only.
    pub d_given_arrival: Option<f64>,
    /// `exp(-int beta) (g(tau) - G(tau))` per path, zero for non-arrivals.
    pub samples: Vec<f64>,
}

pub fn mismatch_samples(problem: &ValidatedProblem, paths: &[Trajectory]) -> Vec<f64> {
    let horizon = problem.horizon();
    paths
        .iter()
        .map(|p| match p.arrival_time() {
            Some(t) => {
                let g = problem.terminal_perceived().value_at(t, horizon);
                let big_g = problem.terminal_actual().value_at(t, horizon);
                p.survival() * (g - big_g)
            }
            None => 0.0,
        })
        .collect()
}

pub fn value_of_information(
    problem: &ValidatedProblem,
    paths: &[Trajectory],
) -> Result<MismatchStats, InfoError> {
    if paths.is_empty() {
        return Err(InfoError::EmptyEnsemble);
    }
    let samples = mismatch_samples(problem, paths);
    let n = samples.len() as f64;
    let d = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - d) * (s - d)).sum::<f64>() / n;
    let arrived: Vec<f64> = paths
        .iter()
        .zip(&samples)
        .filter(|(p, _)| p.arrival_time().is_some())
        .map(|(_, &s)| s)
        .collect();
    Ok(MismatchStats {
        n_paths: paths.len(),
        arrived: arrived.len(),
        d,
        var,
        std_error: (var / n).sqrt(),
        d_given_arrival: (!arrived.is_empty())
            .then(|| arrived.iter().sum::<f64>() / arrived.len() as f64),
        samples,
    })
}

/// Ensemble estimates of the payoff under `g` and under `G` from one path set.
/// Their difference is `-D` path by path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffDecomposition {
    pub v_partial: f64,
    pub v_actual: f64,
}

pub fn decompose(problem: &ValidatedProblem, paths: &[Trajectory]) -> PayoffDecomposition {
    let n = paths.len().max(1) as f64;
    let mean = |sel| {
        paths
            .iter()
            .map(|p| realized_payoff(p, problem, sel))
            .sum::<f64>()
            / n
    };
    PayoffDecomposition {
        v_partial: mean(TerminalSelector::Perceived),
        v_actual: mean(TerminalSelector::Actual),
    }
}

/// Adds an informed-detour regime: detour dynamics, paid the actual reward,
/// entered only from waiting at the stop-over for `h_informed`. The original
/// regimes are paid the perceived reward.
pub fn extend_with_information_regime(
    problem: &ValidatedProblem,
    h_informed: f64,
) -> Result<ValidatedProblem, InfoError> {
    let stopover = problem.stopover().ok_or(InfoError::NoStopover)?;
    if problem
        .regime_with_label(RegimeLabel::InformedDetour)
        .is_some()
    {
        return Err(InfoError::AlreadyExtended);
    }
    let detour = problem
        .regime_with_label(RegimeLabel::Detour)
        .ok_or(InfoError::NoDetour)?;
    let waiting = problem.waiting_regime();
    let mut spec = problem.spec().clone();
    for r in &mut spec.regimes {
        r.terminal = TerminalSource::Perceived;
    }
    let mut informed = spec.regimes[detour].clone();
    informed.label = RegimeLabel::InformedDetour;
    informed.terminal = TerminalSource::Actual;
    if matches!(informed.running, RunningReward::Staging) {
        informed.running = RunningReward::Constant { rate: 0.0 };
    }
    spec.regimes.push(informed);

    let m = spec.regimes.len();
    let costs = &mut spec.costs;
    for row in &mut costs.base {
        row.push(0.0);
    }
    for row in &mut costs.feasibility {
        row.push(Feasibility::Never);
    }
    costs.base.push(vec![0.0; m]);
    let mut last = vec![Feasibility::Never; m];
    last[m - 1] = Feasibility::Everywhere;
    costs.feasibility.push(last);
    costs.set(
        waiting,
        m - 1,
        h_informed,
        Feasibility::Sites {
            sites: vec![stopover],
        },
    );
    Ok(ValidatedProblem::with_spec(spec)?)
}

/// How paths of the informed-regime system reach the informed regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySource {
    /// Only where the solved switching regions say so.
    #[default]
    Optimal,
    /// Any path that waits one step at the stop-over is switched to the
    /// informed regime and follows its control from then on.
    InformedAfterStopover,
}

/// Forced switch implementing `source` on an extended problem, `None` for
/// [`PolicySource::Optimal`].
pub fn handoff_for(
    problem: &ValidatedProblem,
    source: PolicySource,
) -> Result<Option<Handoff>, InfoError> {
    if source == PolicySource::Optimal {
        return Ok(None);
    }
    let stopover = problem.stopover().ok_or(InfoError::NoStopover)?;
    let site = problem
        .sites()
        .iter()
        .position(|s| s.index == stopover)
        .ok_or(InfoError::NoStopover)?;
    let to = problem
        .regime_with_label(RegimeLabel::InformedDetour)
        .ok_or(InfoError::NotExtended)?;
    Ok(Some(Handoff {
        from: problem.waiting_regime(),
        to,
        site,
    }))
}

/// Arrival times split by whether the path ever waited at the stop-over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohorts {
    pub waiting: Vec<f64>,
    pub no_waiting: Vec<f64>,
    pub waiting_paths: usize,
    pub no_waiting_paths: usize,
}

/// A path belongs to the waiting cohort when it spent at least one lattice
/// step in the waiting regime inside the designated stop-over.
pub fn cohort_split(
    problem: &ValidatedProblem,
    paths: &[Trajectory],
) -> Result<Cohorts, InfoError> {
    let stopover = problem.stopover().ok_or(InfoError::NoStopover)?;
    let pos = problem
        .sites()
        .iter()
        .position(|s| s.index == stopover)
        .ok_or(InfoError::NoStopover)?;
    let mut c = Cohorts {
        waiting: Vec::new(),
        no_waiting: Vec::new(),
        waiting_paths: 0,
        no_waiting_paths: 0,
    };
    for p in paths {
        let waited = p.site_stays[pos] > 0.0;
        if waited {
            c.waiting_paths += 1;
        } else {
            c.no_waiting_paths += 1;
        }
        if let Some(t) = p.arrival_time() {
            if waited {
                c.waiting.push(t);
            } else {
                c.no_waiting.push(t);
            }
        }
    }
    Ok(c)
}

/// Median of a sample, `None` when empty.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    })
}
