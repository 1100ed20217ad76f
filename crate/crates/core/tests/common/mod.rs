//! Shared fixtures for the integration tests: small random problems and an
//! explicit backward-induction oracle for the controlled Markov chain.

#![allow(clippy::needless_range_loop, dead_code)]

use optswitch::hjb::Grid;
use optswitch::model::{
    validate_problem, Feasibility, ProblemSpec, RegimeLabel, RegimeParams, RewardProfile,
    RunningReward, StartState, StopOverSite, SwitchingCosts, TerminalSource, UnitScale,
    ValidatedProblem,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random 2- or 3-regime problem on `[0, 1] x [0, 1]` with one site, costs
/// drawn from `[0.06, 0.12)` so every strict triangle inequality holds.
/// Direct flight, when present, has no exits.
pub fn random_problem(seed: u64) -> ValidatedProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_regimes = if rng.random_bool(0.5) { 2 } else { 3 };
    let labels: &[RegimeLabel] = if n_regimes == 2 {
        &[RegimeLabel::Detour, RegimeLabel::Waiting]
    } else {
        &[
            RegimeLabel::Detour,
            RegimeLabel::Direct,
            RegimeLabel::Waiting,
        ]
    };
    let regimes = labels
        .iter()
        .map(|&label| {
            let waiting = label == RegimeLabel::Waiting;
            RegimeParams {
                label,
                drift: if waiting {
                    0.0
                } else {
                    rng.random_range(0.05..0.2)
                },
                diffusion: if waiting {
                    0.0
                } else {
                    rng.random_range(0.0005..0.004)
                },
                mortality: rng.random_range(0.0..0.3),
                running: if waiting {
                    RunningReward::Staging
                } else {
                    RunningReward::Constant {
                        rate: rng.random_range(0.0..0.2),
                    }
                },
                terminal: TerminalSource::Perceived,
            }
        })
        .collect();
    let mut costs = SwitchingCosts::uniform(n_regimes, 0.0);
    for i in 0..n_regimes {
        for j in 0..n_regimes {
            if i != j && labels[i] == RegimeLabel::Direct {
                costs.set(i, j, 0.1, Feasibility::Never);
            } else if i != j {
                let site_only = rng.random_bool(0.3);
                costs.set(
                    i,
                    j,
                    rng.random_range(0.06..0.12),
                    if site_only {
                        Feasibility::AnySite
                    } else {
                        Feasibility::Everywhere
                    },
                );
            }
        }
    }
    let start = rng.random_range(0.1..0.4);
    let spec = ProblemSpec {
        name: format!("random-{seed}"),
        length: 1.0,
        horizon: 1.0,
        units: UnitScale::default(),
        regimes,
        costs,
        sites: vec![StopOverSite {
            index: 0,
            start,
            width: rng.random_range(0.1..0.3),
            staging_reward: rng.random_range(0.1..0.6),
        }],
        terminal_perceived: RewardProfile::gaussian(
            rng.random_range(0.3..0.9),
            rng.random_range(0.35..0.7),
        ),
        terminal_actual: RewardProfile::Constant { value: 0.0 },
        start: StartState {
            time: 0.0,
            position: 0.0,
            regime: 0,
        },
        stopover: None,
    };
    validate_problem(&spec).expect("random problem is valid")
}

pub fn random_spec(seed: u64) -> ProblemSpec {
    random_problem(seed).into_spec()
}

/// Explicit backward induction for the continuous-time chain on the grid's
/// nodes: up-rate `v/dx + mu/dx^2`, down-rate `mu/dx^2` (reflected into the
/// up-rate at `x = 0`), killing rate `beta`, reward rate `f`, and payoff
/// `g(t)` on reaching `x = L`. Each grid step is split into `substeps`
/// explicit steps, each followed by the switching projection.
///
/// Returns values laid out `[regime][time][space]` like `ValueField`.
pub fn oracle(problem: &ValidatedProblem, grid: &Grid, substeps: usize) -> Vec<f64> {
    let m = problem.n_regimes();
    let (nx, nt) = (grid.nx, grid.nt);
    let horizon = problem.horizon();
    let g = problem.terminal_perceived();
    let delta = grid.dt / substeps as f64;
    let dx = grid.dx;
    let mut out = vec![0.0; m * (nt + 1) * nx];
    let at = |i: usize, t: usize| (i * (nt + 1) + t) * nx;
    let mut w = vec![vec![0.0; nx]; m];
    for row in &mut w {
        row[nx - 1] = g.value_at(horizon, horizon);
    }
    for i in 0..m {
        out[at(i, nt)..at(i, nt) + nx].copy_from_slice(&w[i]);
    }
    let cost = |n: usize, i: usize, j: usize| {
        if i == j {
            None
        } else {
            problem.switch_cost(i, j, 0.0, grid.x(n))
        }
    };
    for step in (0..nt).rev() {
        for k in (0..substeps).rev() {
            let s = grid.t(step) + k as f64 * delta;
            let mut next = w.clone();
            for i in 0..m {
                let r = problem.regime(i);
                let a = r.diffusion / (dx * dx);
                let b = r.drift / dx;
                for n in 0..nx - 1 {
                    let (up, down) = if n == 0 {
                        (delta * (b + 2.0 * a), 0.0)
                    } else {
                        (delta * (b + a), delta * a)
                    };
                    assert!(up + down <= 1.0, "substep too coarse");
                    let below = if n == 0 { 0.0 } else { w[i][n - 1] };
                    let expect = up * w[i][n + 1] + down * below + (1.0 - up - down) * w[i][n];
                    next[i][n] = delta * problem.eval_running(i, s, grid.x(n))
                        + (1.0 - r.mortality * delta) * expect;
                }
                next[i][nx - 1] = g.value_at(s, horizon);
            }
            for n in 0..nx - 1 {
                let mut node: Vec<f64> = (0..m).map(|i| next[i][n]).collect();
                optswitch::hjb::project_node(&mut node, |i, j| cost(n, i, j));
                for i in 0..m {
                    next[i][n] = node[i];
                }
            }
            w = next;
        }
        for i in 0..m {
            out[at(i, step)..at(i, step) + nx].copy_from_slice(&w[i]);
        }
    }
    out
}

/// Substeps per grid step keeping every explicit move probability at or
/// below one half.
pub fn oracle_substeps(problem: &ValidatedProblem, grid: &Grid) -> usize {
    let dx = grid.dx;
    let max_rate = problem
        .regimes()
        .iter()
        .map(|r| r.drift / dx + 2.0 * r.diffusion / (dx * dx))
        .fold(0.0, f64::max);
    ((2.0 * grid.dt * max_rate).ceil() as usize).max(1) * 4
}

pub fn sup_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
