//! Bundled parameter sets.
//!
//! Both presets store physical values (km, km/day, days) and carry the
//! distance rescaling factor `1/1290` that maps the Table-2 route length of
//! 6450 km onto 5 model units. Diffusion coefficients are taken as model-unit
//! values for `table2`; for `table1` they are scaled linearly with distance so
//! the random-walk lattice stays feasible (see README, "Units").

use crate::model::{
    Feasibility, ProblemSpec, RegimeLabel, RegimeParams, RewardProfile, RunningReward, StartState,
    StopOverSite, SwitchingCosts, TerminalSource, UnitScale,
};

/// Distance rescaling shared by both presets.
pub const DISTANCE_SCALE: f64 = 1.0 / 1290.0;
/// Uniform switching cost of both parameter tables.
pub const SWITCH_COST: f64 = 0.05;

fn regime(label: RegimeLabel, drift: f64, diffusion: f64, mortality: f64) -> RegimeParams {
    RegimeParams {
        label,
        drift,
        diffusion,
        mortality,
        running: if label == RegimeLabel::Waiting {
            RunningReward::Staging
        } else {
            RunningReward::Constant { rate: 0.0 }
        },
        terminal: TerminalSource::Perceived,
    }
}

fn site(index: usize, start: f64, width: f64, staging_reward: f64) -> StopOverSite {
    StopOverSite {
        index,
        start,
        width,
        staging_reward,
    }
}

/// Three-regime costs: waiting entry/exit at `waiting_sites`, direct flight
/// entry at `direct_sites`, no exits from direct flight.
fn three_regime_costs(waiting_sites: Feasibility, direct_sites: Feasibility) -> SwitchingCosts {
    let mut costs = SwitchingCosts::uniform(3, SWITCH_COST);
    costs.feasibility = vec![
        vec![
            Feasibility::Everywhere,
            direct_sites.clone(),
            waiting_sites.clone(),
        ],
        vec![
            Feasibility::Never,
            Feasibility::Everywhere,
            Feasibility::Never,
        ],
        vec![waiting_sites, direct_sites, Feasibility::Everywhere],
    ];
    costs
}

/// Pacific brant spring migration, Izembek route.
///
/// Site 0 is the wintering origin; sites 1-3 are the early, middle and late
/// stop-overs. Direct flight can be started from any of sites 1-3.
pub fn table1() -> ProblemSpec {
    let horizon = 72.0;
    ProblemSpec {
        name: "table1".into(),
        length: 5301.0,
        horizon,
        units: UnitScale {
            distance: DISTANCE_SCALE,
            diffusion: DISTANCE_SCALE,
        },
        regimes: vec![
            regime(RegimeLabel::Detour, 373.33, 0.5, 0.02),
            regime(RegimeLabel::Direct, 560.0, 1.0, 0.05),
            regime(RegimeLabel::Waiting, 0.0, 0.0, 0.005),
        ],
        costs: three_regime_costs(
            Feasibility::AnySite,
            Feasibility::Sites {
                sites: vec![1, 2, 3],
            },
        ),
        sites: vec![
            site(0, 0.0, 100.0, 0.00165),
            site(1, 400.0, 100.0, 0.00096),
            site(2, 2500.0, 100.0, 0.00276),
            site(3, 4200.0, 100.0, 0.000685),
        ],
        terminal_perceived: RewardProfile::gaussian(horizon / 2.0, horizon / 4.0),
        terminal_actual: RewardProfile::gaussian(horizon / 2.0, horizon / 4.0),
        start: StartState {
            time: 0.0,
            position: 0.0,
            regime: 0,
        },
        stopover: None,
    }
}

/// Perceived terminal reward of the information experiments: a Gaussian
/// centred at `3T/4` with width `T/8`.
pub fn late_gaussian(horizon: f64) -> RewardProfile {
    RewardProfile::gaussian(0.75 * horizon, horizon / 8.0)
}

/// Single-peak actual reward of the step-projection experiment: zero before
/// `T/2`, rising to 1 at `3T/4`, back to zero at `T`.
pub fn mode1_actual(horizon: f64) -> RewardProfile {
    RewardProfile::Triangular {
        start: 0.5 * horizon,
        peak: 0.75 * horizon,
        end: horizon,
    }
}

/// Icelandic whimbrel spring migration: one stop-over at about
/// two thirds of the route, switching only at the wintering site and the
/// stop-over, direct flight only from the wintering site.
pub fn table2() -> ProblemSpec {
    let horizon = 70.0;
    let length = 6450.0;
    ProblemSpec {
        name: "table2".into(),
        length,
        horizon,
        units: UnitScale {
            distance: DISTANCE_SCALE,
            diffusion: 1.0,
        },
        regimes: vec![
            regime(RegimeLabel::Detour, 180.6, 0.01, 0.0005),
            regime(RegimeLabel::Direct, 477.3, 0.011, 0.00055),
            regime(RegimeLabel::Waiting, 0.0, 0.0, 0.0005),
        ],
        costs: three_regime_costs(
            Feasibility::Sites { sites: vec![0, 1] },
            Feasibility::Sites { sites: vec![0] },
        ),
        sites: vec![
            site(0, 0.0, 129.0, 0.00165),
            site(1, 4300.0, 129.0, 0.00276),
        ],
        terminal_perceived: late_gaussian(horizon),
        terminal_actual: late_gaussian(horizon),
        start: StartState {
            time: 0.0,
            position: 0.0,
            regime: 0,
        },
        stopover: Some(1),
    }
}

pub fn by_name(name: &str) -> Option<ProblemSpec> {
    match name {
        "table1" => Some(table1()),
        "table2" => Some(table2()),
        _ => None,
    }
}
