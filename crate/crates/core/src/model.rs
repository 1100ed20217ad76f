//! Problem data model: regimes, switching costs, stop-over sites and
//! terminal-reward profiles, plus validation of a complete configuration.
//!
//! Regimes are addressed by their zero-based position in
//! [`ProblemSpec::regimes`]. Costs of "infinite" switches are never stored as
//! large floats; a pair that is not allowed at a location is reported as
//! `None` by [`ValidatedProblem::switch_cost`].

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Midpoint panels per partition cell when averaging a profile over a cell.
pub const CELL_QUADRATURE_PANELS: usize = 1024;

/// Default amplitude of the oscillation `kappa(t) = 0.1 sin(140 pi t / T)`.
pub const DEFAULT_KAPPA_AMPLITUDE: f64 = 0.1;
/// Default frequency coefficient of the oscillation.
pub const DEFAULT_KAPPA_FREQUENCY: f64 = 140.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("domain must have positive length and horizon (L = {length}, T = {horizon})")]
    InvalidDomain { length: f64, horizon: f64 },
    #[error("negative or non-finite parameter: {what} = {value}")]
    NegativeParameter { what: String, value: f64 },
    #[error("no waiting regime (a regime with zero drift and zero diffusion)")]
    MissingWaitingRegime,
    #[error("more than one regime has zero drift and zero diffusion: {0:?}")]
    AmbiguousWaitingRegime(Vec<usize>),
    #[error("cost matrix must be {expected}x{expected}")]
    DimensionMismatch { expected: usize },
    #[error("switching cost h[{i}][{i}] must be zero")]
    NonZeroDiagonal { i: usize },
    #[error("switching cost h[{i}][{j}] must be positive")]
    NonPositiveSwitchCost { i: usize, j: usize },
    #[error("switching out of the direct-flight regime {from} must be infeasible (to {to})")]
    DirectFlightExit { from: usize, to: usize },
    #[error(
        "triangle inequality violated: h[{i}][{j}] = {direct} >= h[{i}][{q}] + h[{q}][{j}] = {via}"
    )]
    TriangleInequality {
        i: usize,
        q: usize,
        j: usize,
        direct: f64,
        via: f64,
    },
    #[error("sites {a} and {b} overlap")]
    OverlappingSites { a: usize, b: usize },
    #[error("site {index} must satisfy 0 <= start < start + width <= L")]
    SiteOutOfDomain { index: usize },
    #[error("duplicate site index {0}")]
    DuplicateSite(usize),
    #[error("unknown site index {0}")]
    UnknownSite(usize),
    #[error("unknown regime index {0}")]
    UnknownRegime(usize),
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("start state ({time}, {position}) outside the domain")]
    StartOutOfDomain { time: f64, position: f64 },
    #[error("invalid reward profile: {0}")]
    InvalidProfile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeLabel {
    Detour,
    Direct,
    Waiting,
    InformedDetour,
}

impl RegimeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RegimeLabel::Detour => "detour",
            RegimeLabel::Direct => "direct",
            RegimeLabel::Waiting => "waiting",
            RegimeLabel::InformedDetour => "informed_detour",
        }
    }
}

/// Running reward rate of a regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunningReward {
    /// The same rate everywhere.
    Constant { rate: f64 },
    /// The staging reward of the site containing `x`, zero off-site.
    Staging,
}

impl Default for RunningReward {
    fn default() -> Self {
        RunningReward::Constant { rate: 0.0 }
    }
}

/// Which of the two configured terminal profiles a regime is paid with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalSource {
    #[default]
    Perceived,
    Actual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    pub label: RegimeLabel,
    /// Drift `v`, distance per day.
    pub drift: f64,
    /// Diffusion `mu`, distance squared per day.
    pub diffusion: f64,
    /// Mortality (discount) rate `beta`, per day.
    pub mortality: f64,
    #[serde(default)]
    pub running: RunningReward,
    #[serde(default)]
    pub terminal: TerminalSource,
}

impl RegimeParams {
    pub fn is_stationary(&self) -> bool {
        self.drift == 0.0 && self.diffusion == 0.0
    }
}

/// Where a switch between two regimes is allowed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "where", rename_all = "snake_case")]
pub enum Feasibility {
    Everywhere,
    Never,
    AnySite,
    Sites { sites: Vec<usize> },
}

impl Feasibility {
    fn allows(&self, site: Option<usize>) -> bool {
        match self {
            Feasibility::Everywhere => true,
            Feasibility::Never => false,
            Feasibility::AnySite => site.is_some(),
            Feasibility::Sites { sites } => site.is_some_and(|k| sites.contains(&k)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingCosts {
    /// `base[i][j]` is the cost of switching from regime `i` to `j`.
    pub base: Vec<Vec<f64>>,
    pub feasibility: Vec<Vec<Feasibility>>,
}

impl SwitchingCosts {
    /// Same cost `h` for every ordered pair, feasible everywhere.
    pub fn uniform(n_regimes: usize, h: f64) -> Self {
        let base = (0..n_regimes)
            .map(|i| {
                (0..n_regimes)
                    .map(|j| if i == j { 0.0 } else { h })
                    .collect()
            })
            .collect();
        let feasibility = (0..n_regimes)
            .map(|_| vec![Feasibility::Everywhere; n_regimes])
            .collect();
        SwitchingCosts { base, feasibility }
    }

    /// Cost of `i -> j` for a location inside `site` (or off-site), `None` when
    /// the switch is not allowed there.
    pub fn cost_in_zone(&self, i: usize, j: usize, site: Option<usize>) -> Option<f64> {
        if i == j {
            return Some(0.0);
        }
        if self.feasibility[i][j].allows(site) {
            Some(self.base[i][j])
        } else {
            None
        }
    }

    pub fn set(&mut self, i: usize, j: usize, cost: f64, feasibility: Feasibility) {
        self.base[i][j] = cost;
        self.feasibility[i][j] = feasibility;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopOverSite {
    pub index: usize,
    /// First position `X_k` inside the site.
    pub start: f64,
    /// Width `eps_k`; the site is the closed interval `[X_k, X_k + eps_k]`.
    pub width: f64,
    /// Staging reward per day while waiting inside the site.
    pub staging_reward: f64,
}

impl StopOverSite {
    pub fn end(&self) -> f64 {
        self.start + self.width
    }

    pub fn contains(&self, x: f64) -> bool {
        let slack = 1e-9 * self.width.max(1.0);
        x >= self.start - slack && x <= self.end() + slack
    }
}

/// Terminal reward as a function of arrival time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardProfile {
    Constant {
        value: f64,
    },
    Gaussian {
        center: f64,
        sigma: f64,
    },
    /// Unit-height hat supported on `[start, end]` with its maximum at `peak`.
    Triangular {
        start: f64,
        peak: f64,
        end: f64,
    },
    /// Projection of `source` onto step functions over `cells` equal cells of
    /// `[0, T]`: each cell carries the average of the source over it.
    StepProjection {
        source: Box<RewardProfile>,
        cells: usize,
    },
    /// `source(t + t_move)`: the same profile peaking `t_move` earlier.
    Shifted {
        source: Box<RewardProfile>,
        t_move: f64,
    },
    /// `source(t) + amplitude * kappa(t)` with
    /// `kappa(t) = kappa_amplitude * sin(frequency * pi * t / T)`.
    Noisy {
        source: Box<RewardProfile>,
        amplitude: f64,
        #[serde(default = "default_kappa_amplitude")]
        kappa_amplitude: f64,
        #[serde(default = "default_kappa_frequency")]
        frequency: f64,
    },
}

fn default_kappa_amplitude() -> f64 {
    DEFAULT_KAPPA_AMPLITUDE
}

fn default_kappa_frequency() -> f64 {
    DEFAULT_KAPPA_FREQUENCY
}

impl RewardProfile {
    pub fn gaussian(center: f64, sigma: f64) -> Self {
        RewardProfile::Gaussian { center, sigma }
    }

    pub fn step_projection(source: RewardProfile, cells: usize) -> Self {
        RewardProfile::StepProjection {
            source: Box::new(source),
            cells,
        }
    }

    pub fn shifted(source: RewardProfile, t_move: f64) -> Self {
        RewardProfile::Shifted {
            source: Box::new(source),
            t_move,
        }
    }

    pub fn noisy(source: RewardProfile, amplitude: f64) -> Self {
        RewardProfile::Noisy {
            source: Box::new(source),
            amplitude,
            kappa_amplitude: DEFAULT_KAPPA_AMPLITUDE,
            frequency: DEFAULT_KAPPA_FREQUENCY,
        }
    }

    /// Value at `t` without a domain check. Shifted profiles may evaluate
    /// their source outside `[0, T]`.
    pub fn value_at(&self, t: f64, horizon: f64) -> f64 {
        match self {
            RewardProfile::Constant { value } => *value,
            RewardProfile::Gaussian { center, sigma } => {
                let z = (t - center) / sigma;
                (-0.5 * z * z).exp()
            }
            RewardProfile::Triangular { start, peak, end } => {
                if t < *start || t > *end {
                    0.0
                } else if t <= *peak {
                    if peak > start {
                        (t - start) / (peak - start)
                    } else {
                        1.0
                    }
                } else if end > peak {
                    (end - t) / (end - peak)
                } else {
                    1.0
                }
            }
            RewardProfile::StepProjection { source, cells } => {
                let n = (*cells).max(1);
                let width = horizon / n as f64;
                let k = ((t / width).floor().max(0.0) as usize).min(n - 1);
                cell_average(source, k as f64 * width, width, horizon)
            }
            RewardProfile::Shifted { source, t_move } => source.value_at(t + t_move, horizon),
            RewardProfile::Noisy {
                source,
                amplitude,
                kappa_amplitude,
                frequency,
            } => {
                let kappa =
                    kappa_amplitude * (frequency * std::f64::consts::PI * t / horizon).sin();
                source.value_at(t, horizon) + amplitude * kappa
            }
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidProfile(msg.to_owned()));
        match self {
            RewardProfile::Constant { value } if !value.is_finite() => bad("non-finite constant"),
            RewardProfile::Gaussian { sigma, center }
                if !(sigma.is_finite() && *sigma > 0.0 && center.is_finite()) =>
            {
                bad("gaussian sigma must be positive")
            }
            RewardProfile::Triangular { start, peak, end } if !(start <= peak && peak <= end) => {
                bad("triangular profile needs start <= peak <= end")
            }
            RewardProfile::StepProjection { cells, .. } if *cells == 0 => {
                bad("step projection needs at least one cell")
            }
            RewardProfile::StepProjection { source, .. }
            | RewardProfile::Shifted { source, .. } => source.validate(),
            RewardProfile::Noisy {
                source, amplitude, ..
            } => {
                if !amplitude.is_finite() {
                    return bad("non-finite noise amplitude");
                }
                source.validate()
            }
            _ => Ok(()),
        }
    }
}

/// Midpoint-rule average of `profile` over `[a, a + width]`.
pub fn cell_average(profile: &RewardProfile, a: f64, width: f64, horizon: f64) -> f64 {
    let h = width / CELL_QUADRATURE_PANELS as f64;
    let sum: f64 = (0..CELL_QUADRATURE_PANELS)
        .map(|p| profile.value_at(a + (p as f64 + 0.5) * h, horizon))
        .sum();
    sum / CELL_QUADRATURE_PANELS as f64
}

/// Evaluates a terminal profile at `t`, rejecting times outside `[0, T]`.
pub fn eval_terminal(profile: &RewardProfile, t: f64, horizon: f64) -> Result<f64, ModelError> {
    if !(0.0..=horizon).contains(&t) {
        return Err(ModelError::TimeOutOfRange { t, horizon });
    }
    Ok(profile.value_at(t, horizon))
}

/// Physical-to-model unit conversion applied at validation. Distances,
/// drifts and site geometry are multiplied by `distance`; diffusion
/// coefficients by `diffusion`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitScale {
    pub distance: f64,
    pub diffusion: f64,
}

impl Default for UnitScale {
    fn default() -> Self {
        UnitScale {
            distance: 1.0,
            diffusion: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartState {
    pub time: f64,
    pub position: f64,
    pub regime: usize,
}

/// A complete optimal-switching problem as read from a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub name: String,
    /// Domain length `L`; the terminal site sits at `x = L`.
    pub length: f64,
    /// Horizon `T` in days.
    pub horizon: f64,
    #[serde(default)]
    pub units: UnitScale,
    pub regimes: Vec<RegimeParams>,
    pub costs: SwitchingCosts,
    #[serde(default)]
    pub sites: Vec<StopOverSite>,
    /// Terminal reward `g` the decision maker believes in.
    pub terminal_perceived: RewardProfile,
    /// Terminal reward `G` that is actually paid.
    pub terminal_actual: RewardProfile,
    pub start: StartState,
    /// Site where information about the actual terminal reward is available.
    #[serde(default)]
    pub stopover: Option<usize>,
}

/// A problem that passed [`validate_problem`], expressed in model units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatedProblem {
    spec: ProblemSpec,
    waiting: usize,
    source_hash: String,
}

/// Stable hex SHA-256 of any serializable value's JSON encoding.
pub fn content_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable value");
    hex::encode(Sha256::digest(&bytes))
}

fn check_nonnegative(what: impl Into<String>, value: f64) -> Result<(), ModelError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::NegativeParameter {
            what: what.into(),
            value,
        })
    }
}

fn rescale(spec: &ProblemSpec) -> ProblemSpec {
    let mut out = spec.clone();
    let UnitScale {
        distance,
        diffusion,
    } = spec.units;
    out.length *= distance;
    out.start.position *= distance;
    for r in &mut out.regimes {
        r.drift *= distance;
        r.diffusion *= diffusion;
    }
    for s in &mut out.sites {
        s.start *= distance;
        s.width *= distance;
    }
    out.units = UnitScale::default();
    out
}

/// Checks every structural assumption of the model and returns the problem in
/// model units with sites sorted by position.
pub fn validate_problem(spec: &ProblemSpec) -> Result<ValidatedProblem, ModelError> {
    let source_hash = content_hash(spec);
    check_nonnegative("units.distance", spec.units.distance)?;
    check_nonnegative("units.diffusion", spec.units.diffusion)?;
    let mut spec = rescale(spec);

    if !(spec.length.is_finite()
        && spec.length > 0.0
        && spec.horizon.is_finite()
        && spec.horizon > 0.0)
    {
        return Err(ModelError::InvalidDomain {
            length: spec.length,
            horizon: spec.horizon,
        });
    }

    let m = spec.regimes.len();
    for (i, r) in spec.regimes.iter().enumerate() {
        check_nonnegative(format!("regimes[{i}].drift"), r.drift)?;
        check_nonnegative(format!("regimes[{i}].diffusion"), r.diffusion)?;
        check_nonnegative(format!("regimes[{i}].mortality"), r.mortality)?;
        if let RunningReward::Constant { rate } = r.running {
            check_nonnegative(format!("regimes[{i}].running.rate"), rate)?;
        }
    }
    let stationary: Vec<usize> = (0..m)
        .filter(|&i| spec.regimes[i].is_stationary())
        .collect();
    let waiting = match stationary.as_slice() {
        [] => return Err(ModelError::MissingWaitingRegime),
        [w] => *w,
        _ => return Err(ModelError::AmbiguousWaitingRegime(stationary)),
    };

    // Sites: geometry, ordering and disjointness.
    spec.sites
        .sort_by(|a, b| a.start.total_cmp(&b.start).then(a.index.cmp(&b.index)));
    for (pos, s) in spec.sites.iter().enumerate() {
        check_nonnegative(
            format!("sites[{}].staging_reward", s.index),
            s.staging_reward,
        )?;
        let inside = s.start.is_finite()
            && s.width.is_finite()
            && s.start >= 0.0
            && s.width > 0.0
            && s.end() <= spec.length * (1.0 + 1e-12);
        if !inside {
            return Err(ModelError::SiteOutOfDomain { index: s.index });
        }
        if spec.sites[..pos].iter().any(|o| o.index == s.index) {
            return Err(ModelError::DuplicateSite(s.index));
        }
        if pos > 0 {
            let prev = &spec.sites[pos - 1];
            if prev.end() >= s.start {
                return Err(ModelError::OverlappingSites {
                    a: prev.index,
                    b: s.index,
                });
            }
        }
    }

    // Costs.
    let costs = &spec.costs;
    if costs.base.len() != m
        || costs.feasibility.len() != m
        || costs.base.iter().any(|row| row.len() != m)
        || costs.feasibility.iter().any(|row| row.len() != m)
    {
        return Err(ModelError::DimensionMismatch { expected: m });
    }
    for i in 0..m {
        for j in 0..m {
            let h = costs.base[i][j];
            check_nonnegative(format!("costs.base[{i}][{j}]"), h)?;
            if i == j {
                if h != 0.0 {
                    return Err(ModelError::NonZeroDiagonal { i });
                }
                continue;
            }
            if let Feasibility::Sites { sites } = &costs.feasibility[i][j] {
                if let Some(k) = sites
                    .iter()
                    .find(|k| !spec.sites.iter().any(|s| s.index == **k))
                {
                    return Err(ModelError::UnknownSite(*k));
                }
            }
            if costs.feasibility[i][j] != Feasibility::Never && h <= 0.0 {
                return Err(ModelError::NonPositiveSwitchCost { i, j });
            }
            if spec.regimes[i].label == RegimeLabel::Direct
                && costs.feasibility[i][j] != Feasibility::Never
            {
                return Err(ModelError::DirectFlightExit { from: i, to: j });
            }
        }
    }
    // Feasibility only depends on which site (if any) contains x, so checking
    // each zone once covers every lattice node.
    let zones: Vec<Option<usize>> = std::iter::once(None)
        .chain(spec.sites.iter().map(|s| Some(s.index)))
        .collect();
    for zone in zones {
        check_triangle(costs, m, zone)?;
    }

    for profile in [&spec.terminal_perceived, &spec.terminal_actual] {
        profile.validate()?;
    }

    let st = spec.start;
    if !(0.0..spec.horizon).contains(&st.time) || !(0.0..=spec.length).contains(&st.position) {
        return Err(ModelError::StartOutOfDomain {
            time: st.time,
            position: st.position,
        });
    }
    if st.regime >= m {
        return Err(ModelError::UnknownRegime(st.regime));
    }
    if let Some(k) = spec.stopover {
        if !spec.sites.iter().any(|s| s.index == k) {
            return Err(ModelError::UnknownSite(k));
        }
    }

    Ok(ValidatedProblem {
        spec,
        waiting,
        source_hash,
    })
}

fn check_triangle(costs: &SwitchingCosts, m: usize, zone: Option<usize>) -> Result<(), ModelError> {
    for i in 0..m {
        for j in (0..m).filter(|&j| j != i) {
            let Some(direct) = costs.cost_in_zone(i, j, zone) else {
                continue;
            };
            for q in (0..m).filter(|&q| q != i && q != j) {
                let (Some(a), Some(b)) = (
                    costs.cost_in_zone(i, q, zone),
                    costs.cost_in_zone(q, j, zone),
                ) else {
                    continue;
                };
                if direct >= a + b {
                    return Err(ModelError::TriangleInequality {
                        i,
                        q,
                        j,
                        direct,
                        via: a + b,
                    });
                }
            }
        }
    }
    Ok(())
}

impl ValidatedProblem {
    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn into_spec(self) -> ProblemSpec {
        self.spec
    }

    /// Hash of the configuration as supplied (before unit rescaling).
    pub fn source_hash(&self) -> &str {
        &self.source_hash
    }

    pub fn length(&self) -> f64 {
        self.spec.length
    }

    pub fn horizon(&self) -> f64 {
        self.spec.horizon
    }

    pub fn n_regimes(&self) -> usize {
        self.spec.regimes.len()
    }

    pub fn regimes(&self) -> &[RegimeParams] {
        &self.spec.regimes
    }

    pub fn regime(&self, i: usize) -> &RegimeParams {
        &self.spec.regimes[i]
    }

    /// Index of the unique regime with zero drift and diffusion.
    pub fn waiting_regime(&self) -> usize {
        self.waiting
    }

    pub fn regime_with_label(&self, label: RegimeLabel) -> Option<usize> {
        self.spec.regimes.iter().position(|r| r.label == label)
    }

    pub fn sites(&self) -> &[StopOverSite] {
        &self.spec.sites
    }

    pub fn site(&self, index: usize) -> Option<&StopOverSite> {
        self.spec.sites.iter().find(|s| s.index == index)
    }

    pub fn site_at(&self, x: f64) -> Option<&StopOverSite> {
        self.spec.sites.iter().find(|s| s.contains(x))
    }

    pub fn costs(&self) -> &SwitchingCosts {
        &self.spec.costs
    }

    pub fn start(&self) -> StartState {
        self.spec.start
    }

    pub fn stopover(&self) -> Option<usize> {
        self.spec.stopover
    }

    pub fn terminal_perceived(&self) -> &RewardProfile {
        &self.spec.terminal_perceived
    }

    pub fn terminal_actual(&self) -> &RewardProfile {
        &self.spec.terminal_actual
    }

    /// Running reward rate `f_i(t, x)`.
    pub fn eval_running(&self, regime: usize, _t: f64, x: f64) -> f64 {
        match self.spec.regimes[regime].running {
            RunningReward::Constant { rate } => rate,
            RunningReward::Staging => self.site_at(x).map_or(0.0, |s| s.staging_reward),
        }
    }

    /// Cost of switching `i -> j` at `(t, x)`; `None` where the switch is not
    /// allowed.
    pub fn switch_cost(&self, i: usize, j: usize, _t: f64, x: f64) -> Option<f64> {
        self.spec
            .costs
            .cost_in_zone(i, j, self.site_at(x).map(|s| s.index))
    }

    /// Re-validates after an edit made in model units.
    pub fn with_spec(spec: ProblemSpec) -> Result<Self, ModelError> {
        validate_problem(&spec)
    }
}
