//! Backward solver for the coupled HJB variational inequalities.
//!
//! Each time step solves, per regime, the implicit Euler discretization
//!
//! ```text
//! -(V[m+1,n] - V[m,n])/dt - v (V[m,n+1] - V[m,n])/dx
//!     - mu (V[m,n+1] - 2V[m,n] + V[m,n-1])/dx^2 + beta V[m,n] - f[m,n] = 0
//! ```
//!
//! with a ghost-node mirror `V[m,-1] = V[m,1]` for the reflecting boundary at
//! `x = 0` and the terminal reward as a Dirichlet value at `x = L`, then
//! projects onto the switching obstacle
//! `V_i = max(V_i, max_j V_j - h_ij)` over the switches allowed at each node.
//! The matrix is an M-matrix for every `v, mu, beta >= 0`, so the scheme is
//! monotone and the Thomas algorithm needs no pivoting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{RewardProfile, TerminalSource, ValidatedProblem};
use crate::tridiag::Tridiagonal;

/// Spatial nodes of the default grid.
pub const DEFAULT_NX: usize = 201;
/// Time steps per day of the default grid.
pub const DEFAULT_STEPS_PER_DAY: f64 = 10.0;
/// Complementarity tolerance is `COMPLEMENTARITY_C * dt`.
pub const COMPLEMENTARITY_C: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HjbError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("tridiagonal solve failed at time step {step}, regime {regime}, row {row}")]
    Singular {
        step: usize,
        regime: usize,
        row: usize,
    },
    #[error("non-finite value at time step {step}, regime {regime}, node {node}")]
    NonFinite {
        step: usize,
        regime: usize,
        node: usize,
    },
    #[error("obstacle iteration did not converge at time step {step}")]
    NotConverged { step: usize },
    #[error("value array has {got} entries, expected {expected}")]
    Shape { got: usize, expected: usize },
}

/// Uniform `(t, x)` lattice with nodes `(m dt, n dx)`, `m = 0..=nt`,
/// `n = 0..nx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub nt: usize,
    pub dx: f64,
    pub dt: f64,
    pub length: f64,
    pub horizon: f64,
}

impl Grid {
    pub fn new(length: f64, horizon: f64, nx: usize, nt: usize) -> Result<Self, HjbError> {
        if nx < 3 {
            return Err(HjbError::InvalidGrid(format!("nx = {nx} < 3")));
        }
        if nt < 1 {
            return Err(HjbError::InvalidGrid("nt must be at least 1".into()));
        }
        if !(length > 0.0 && horizon > 0.0) {
            return Err(HjbError::InvalidGrid("non-positive domain".into()));
        }
        Ok(Grid {
            nx,
            nt,
            dx: length / (nx - 1) as f64,
            dt: horizon / nt as f64,
            length,
            horizon,
        })
    }

    pub fn for_problem(problem: &ValidatedProblem, nx: usize, nt: usize) -> Result<Self, HjbError> {
        Grid::new(problem.length(), problem.horizon(), nx, nt)
    }

    /// `DEFAULT_NX` nodes and `DEFAULT_STEPS_PER_DAY` steps per day.
    pub fn default_for(problem: &ValidatedProblem) -> Self {
        let nt = (problem.horizon() * DEFAULT_STEPS_PER_DAY).round().max(1.0) as usize;
        Grid::for_problem(problem, DEFAULT_NX, nt).expect("default grid is valid")
    }

    pub fn x(&self, n: usize) -> f64 {
        if n + 1 == self.nx {
            self.length
        } else {
            n as f64 * self.dx
        }
    }

    pub fn t(&self, m: usize) -> f64 {
        if m == self.nt {
            self.horizon
        } else {
            m as f64 * self.dt
        }
    }

    pub fn nearest_node(&self, x: f64) -> usize {
        ((x / self.dx).round().max(0.0) as usize).min(self.nx - 1)
    }

    pub fn nearest_step(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.nt)
    }

    pub fn nodes_per_slice(&self) -> usize {
        self.nx * (self.nt + 1)
    }
}

/// Chooses which terminal profile each regime is paid with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalSelector {
    /// Per-regime choice recorded in the problem configuration.
    Model,
    /// Perceived reward `g` for every regime.
    Perceived,
    /// Actual reward `G` for every regime.
    Actual,
}

impl TerminalSelector {
    pub fn profile(self, problem: &ValidatedProblem, regime: usize) -> &RewardProfile {
        let source = match self {
            TerminalSelector::Perceived => TerminalSource::Perceived,
            TerminalSelector::Actual => TerminalSource::Actual,
            TerminalSelector::Model => problem.regime(regime).terminal,
        };
        match source {
            TerminalSource::Perceived => problem.terminal_perceived(),
            TerminalSource::Actual => problem.terminal_actual(),
        }
    }
}

/// Switch costs per node, precomputed from site membership.
#[derive(Debug, Clone)]
pub struct SwitchTable {
    m: usize,
    costs: Vec<Option<f64>>,
}

impl SwitchTable {
    pub fn build(problem: &ValidatedProblem, grid: &Grid) -> Self {
        let m = problem.n_regimes();
        let mut costs = Vec::with_capacity(grid.nx * m * m);
        for n in 0..grid.nx {
            let x = grid.x(n);
            for i in 0..m {
                for j in 0..m {
                    costs.push(if i == j {
                        None
                    } else {
                        problem.switch_cost(i, j, 0.0, x)
                    });
                }
            }
        }
        SwitchTable { m, costs }
    }

    /// Cost of `i -> j` at node `n`; `None` for `i == j` and infeasible pairs.
    #[inline]
    pub fn cost(&self, n: usize, i: usize, j: usize) -> Option<f64> {
        self.costs[(n * self.m + i) * self.m + j]
    }

    /// Best obstacle value `max_j (values[j] - h_ij)` at node `n`, if any
    /// switch out of `i` is allowed there.
    pub fn obstacle(&self, n: usize, i: usize, values: &[f64]) -> Option<f64> {
        (0..self.m)
            .filter_map(|j| self.cost(n, i, j).map(|h| values[j] - h))
            .reduce(f64::max)
    }
}

/// Projects one node's regime values onto the obstacle set. Passes are repeated
/// until nothing changes, so chains of switches through a regime whose direct
/// pair is infeasible are honored too.
pub fn project_node(values: &mut [f64], cost: impl Fn(usize, usize) -> Option<f64>) {
    let m = values.len();
    let mut next = values.to_vec();
    for _ in 0..m.max(1) {
        let mut changed = false;
        for i in 0..m {
            let best = (0..m)
                .filter(|&j| j != i)
                .filter_map(|j| cost(i, j).map(|h| values[j] - h))
                .fold(values[i], f64::max);
            if best > values[i] {
                changed = true;
            }
            next[i] = best;
        }
        values.copy_from_slice(&next);
        if !changed {
            break;
        }
    }
}

/// Applies [`project_node`] to every node of a time row except the Dirichlet
/// node at `x = L`. `rows[i]` is regime `i`'s row.
pub fn apply_obstacle(rows: &[Vec<f64>], table: &SwitchTable) -> Vec<Vec<f64>> {
    let m = rows.len();
    let nx = rows.first().map_or(0, Vec::len);
    let mut out = rows.to_vec();
    let mut node = vec![0.0; m];
    for n in 0..nx.saturating_sub(1) {
        for i in 0..m {
            node[i] = rows[i][n];
        }
        project_node(&mut node, |i, j| table.cost(n, i, j));
        for i in 0..m {
            out[i][n] = node[i];
        }
    }
    out
}

/// Implicit-step matrix of one regime, rows scaled by `dt`.
pub fn assemble_operator(problem: &ValidatedProblem, grid: &Grid, regime: usize) -> Tridiagonal {
    let r = problem.regime(regime);
    let nx = grid.nx;
    let a = grid.dt * r.diffusion / (grid.dx * grid.dx);
    let b = grid.dt * r.drift / grid.dx;
    let diag = 1.0 + b + 2.0 * a + grid.dt * r.mortality;
    let mut sub = vec![-a; nx];
    let mut d = vec![diag; nx];
    let mut sup = vec![-(a + b); nx];
    sub[0] = 0.0;
    sup[0] = -(2.0 * a + b);
    d[nx - 1] = 1.0;
    sub[nx - 1] = 0.0;
    sup[nx - 1] = 0.0;
    Tridiagonal { sub, diag: d, sup }
}

/// Values of every regime on the full lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    grid: Grid,
    problem: ValidatedProblem,
    terminal: TerminalSelector,
    values: Vec<f64>,
}

impl ValueField {
    /// Wraps an externally built value array laid out `[regime][time][space]`.
    pub fn from_values(
        problem: ValidatedProblem,
        grid: Grid,
        terminal: TerminalSelector,
        values: Vec<f64>,
    ) -> Result<Self, HjbError> {
        let expected = problem.n_regimes() * grid.nodes_per_slice();
        if values.len() != expected {
            return Err(HjbError::Shape {
                got: values.len(),
                expected,
            });
        }
        Ok(ValueField {
            grid,
            problem,
            terminal,
            values,
        })
    }

    #[inline]
    fn index(&self, i: usize, m: usize, n: usize) -> usize {
        (i * (self.grid.nt + 1) + m) * self.grid.nx + n
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn problem(&self) -> &ValidatedProblem {
        &self.problem
    }

    pub fn terminal(&self) -> TerminalSelector {
        self.terminal
    }

    pub fn n_regimes(&self) -> usize {
        self.problem.n_regimes()
    }

    #[inline]
    pub fn get(&self, i: usize, m: usize, n: usize) -> f64 {
        self.values[self.index(i, m, n)]
    }

    pub fn set(&mut self, i: usize, m: usize, n: usize, value: f64) {
        let k = self.index(i, m, n);
        self.values[k] = value;
    }

    pub fn row(&self, i: usize, m: usize) -> &[f64] {
        let k = self.index(i, m, 0);
        &self.values[k..k + self.grid.nx]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Nearest-node value of regime `i` at `(t, x)`.
    pub fn value_at(&self, i: usize, t: f64, x: f64) -> f64 {
        self.get(i, self.grid.nearest_step(t), self.grid.nearest_node(x))
    }

    /// Value at the problem's configured start state.
    pub fn start_value(&self) -> f64 {
        let s = self.problem.start();
        self.value_at(s.regime, s.time, s.position)
    }

    pub fn range(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Largest violation of `V_i >= V_j - h_ij` over all nodes (0 if none).
    pub fn obstacle_violation(&self) -> f64 {
        let table = SwitchTable::build(&self.problem, &self.grid);
        let m = self.n_regimes();
        let mut worst = 0.0f64;
        let mut node = vec![0.0; m];
        for t in 0..=self.grid.nt {
            for n in 0..self.grid.nx {
                for (i, v) in node.iter_mut().enumerate() {
                    *v = self.get(i, t, n);
                }
                for i in 0..m {
                    if let Some(ob) = table.obstacle(n, i, &node) {
                        worst = worst.max(ob - node[i]);
                    }
                }
            }
        }
        worst
    }
}

/// How the obstacle is enforced in each time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleScheme {
    /// One implicit solve followed by one projection onto the obstacle.
    Split,
    /// Starts from the split step and runs policy iteration on the discrete
    /// variational inequality until the set of switching nodes is stable, so
    /// `min(PDE residual, obstacle gap) = 0` holds to round-off at every node.
    #[default]
    Coupled,
}

/// Policy-iteration limits of the coupled scheme.
const MAX_POLICY_ITERATIONS: usize = 100;
const MAX_SWEEPS: usize = 2000;

/// Solves the variational-inequality system backward from `t = T` with the
/// default obstacle scheme.
pub fn solve_backward(
    problem: &ValidatedProblem,
    grid: &Grid,
    terminal: TerminalSelector,
) -> Result<ValueField, HjbError> {
    solve_backward_with(problem, grid, terminal, ObstacleScheme::default())
}

pub fn solve_backward_with(
    problem: &ValidatedProblem,
    grid: &Grid,
    terminal: TerminalSelector,
    scheme: ObstacleScheme,
) -> Result<ValueField, HjbError> {
    let m = problem.n_regimes();
    let (nx, nt) = (grid.nx, grid.nt);
    let horizon = problem.horizon();
    let operators: Vec<Tridiagonal> = (0..m)
        .map(|i| assemble_operator(problem, grid, i))
        .collect();
    let profiles: Vec<&RewardProfile> = (0..m).map(|i| terminal.profile(problem, i)).collect();
    let table = SwitchTable::build(problem, grid);
    let running: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            (0..nx)
                .map(|n| problem.eval_running(i, 0.0, grid.x(n)))
                .collect()
        })
        .collect();

    let mut values = vec![0.0; m * grid.nodes_per_slice()];
    let at = |i: usize, t: usize| (i * (nt + 1) + t) * nx;

    for i in 0..m {
        values[at(i, nt) + nx - 1] = profiles[i].value_at(horizon, horizon);
    }

    let mut rhs = vec![vec![0.0; nx]; m];
    let mut rows = vec![vec![0.0; nx]; m];
    let mut scratch = Vec::with_capacity(nx);
    let mut node = vec![0.0; m];
    let mut coupled = CoupledStep::new(m, nx);
    for step in (0..nt).rev() {
        let t = grid.t(step);
        for i in 0..m {
            let next = &values[at(i, step + 1)..at(i, step + 1) + nx];
            for n in 0..nx - 1 {
                rhs[i][n] = next[n] + grid.dt * running[i][n];
            }
            rhs[i][nx - 1] = profiles[i].value_at(t, horizon);
            rows[i].copy_from_slice(&rhs[i]);
            operators[i]
                .solve_into(&mut rows[i], &mut scratch)
                .map_err(|e| HjbError::Singular {
                    step,
                    regime: i,
                    row: e.row,
                })?;
        }
        for n in 0..nx - 1 {
            for i in 0..m {
                node[i] = rows[i][n];
            }
            project_node(&mut node, |i, j| table.cost(n, i, j));
            for i in 0..m {
                rows[i][n] = node[i];
            }
        }
        if scheme == ObstacleScheme::Coupled {
            coupled.run(&operators, &rhs, &table, &mut rows, step)?;
        }
        for i in 0..m {
            if let Some(n) = rows[i].iter().position(|v| !v.is_finite()) {
                return Err(HjbError::NonFinite {
                    step,
                    regime: i,
                    node: n,
                });
            }
            values[at(i, step)..at(i, step) + nx].copy_from_slice(&rows[i]);
        }
    }

    ValueField::from_values(problem.clone(), *grid, terminal, values)
}

/// Work buffers for policy iteration on one time row.
///
/// A policy marks, per regime and node, either the PDE row or a switch to a
/// target regime. Evaluating a policy solves, by block Gauss-Seidel over the
/// regimes, the system in which switching rows read `V_i = V_j - h_ij`.
/// Improvement picks, at each node, the branch of
/// `min(A V - rhs, V - max_j(V_j - h_ij))` with the smaller value.
struct CoupledStep {
    target: Vec<Vec<Option<usize>>>,
    op: Tridiagonal,
    rhs: Vec<f64>,
    scratch: Vec<f64>,
}

impl CoupledStep {
    fn new(m: usize, nx: usize) -> Self {
        CoupledStep {
            target: vec![vec![None; nx]; m],
            op: Tridiagonal {
                sub: vec![0.0; nx],
                diag: vec![0.0; nx],
                sup: vec![0.0; nx],
            },
            rhs: vec![0.0; nx],
            scratch: Vec::with_capacity(nx),
        }
    }

    fn best(table: &SwitchTable, rows: &[Vec<f64>], n: usize, i: usize) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (j, row) in rows.iter().enumerate() {
            if let Some(h) = table.cost(n, i, j) {
                let cand = row[n] - h;
                if best.is_none_or(|(_, b)| cand > b) {
                    best = Some((j, cand));
                }
            }
        }
        best
    }

    fn creates_cycle(&self, n: usize, i: usize, j: usize) -> bool {
        let mut k = j;
        for _ in 0..self.target.len() {
            match self.target[k][n] {
                Some(next) if next == i => return true,
                Some(next) => k = next,
                None => return false,
            }
        }
        true
    }

    fn run(
        &mut self,
        ops: &[Tridiagonal],
        rhs: &[Vec<f64>],
        table: &SwitchTable,
        rows: &mut [Vec<f64>],
        step: usize,
    ) -> Result<(), HjbError> {
        let m = rows.len();
        let nx = rows[0].len();
        let scale = rows
            .iter()
            .flatten()
            .fold(1.0f64, |acc, v| acc.max(v.abs()));
        let eps = 1e-13 * scale;

        // The split step leaves switching nodes exactly on the obstacle.
        for n in 0..nx - 1 {
            for i in 0..m {
                self.target[i][n] = None;
            }
            for i in 0..m {
                if let Some((j, ob)) = Self::best(table, rows, n, i) {
                    if rows[i][n] <= ob && !self.creates_cycle(n, i, j) {
                        self.target[i][n] = Some(j);
                    }
                }
            }
        }

        for _ in 0..MAX_POLICY_ITERATIONS {
            self.evaluate(ops, rhs, table, rows, step, eps)?;
            let mut changed = false;
            for n in 0..nx - 1 {
                for i in 0..m {
                    let old = self.target[i][n];
                    let Some((j, ob)) = Self::best(table, rows, n, i) else {
                        continue;
                    };
                    let gap = rows[i][n] - ob;
                    let pde = row_residual(&ops[i], &rows[i], rhs[i][n], n);
                    let active = if gap < pde - eps {
                        true
                    } else if gap > pde + eps {
                        false
                    } else {
                        old.is_some()
                    };
                    self.target[i][n] = None;
                    let new = (active && !self.creates_cycle(n, i, j)).then_some(j);
                    self.target[i][n] = new;
                    changed |= new != old;
                }
            }
            if !changed {
                return Ok(());
            }
        }
        Err(HjbError::NotConverged { step })
    }

    fn evaluate(
        &mut self,
        ops: &[Tridiagonal],
        rhs: &[Vec<f64>],
        table: &SwitchTable,
        rows: &mut [Vec<f64>],
        step: usize,
        eps: f64,
    ) -> Result<(), HjbError> {
        let m = rows.len();
        let nx = rows[0].len();
        for _ in 0..MAX_SWEEPS {
            let mut change = 0.0f64;
            for i in 0..m {
                self.op.sub.copy_from_slice(&ops[i].sub);
                self.op.diag.copy_from_slice(&ops[i].diag);
                self.op.sup.copy_from_slice(&ops[i].sup);
                self.rhs.copy_from_slice(&rhs[i]);
                for n in 0..nx - 1 {
                    if let Some(j) = self.target[i][n] {
                        let h = table.cost(n, i, j).expect("policy targets are feasible");
                        self.op.sub[n] = 0.0;
                        self.op.diag[n] = 1.0;
                        self.op.sup[n] = 0.0;
                        self.rhs[n] = rows[j][n] - h;
                    }
                }
                self.op
                    .solve_into(&mut self.rhs, &mut self.scratch)
                    .map_err(|e| HjbError::Singular {
                        step,
                        regime: i,
                        row: e.row,
                    })?;
                for (old, new) in rows[i].iter_mut().zip(&self.rhs) {
                    change = change.max((*old - new).abs());
                    *old = *new;
                }
            }
            if change <= eps {
                return Ok(());
            }
        }
        Err(HjbError::NotConverged { step })
    }
}

/// Row `n` of `A v - rhs` for a dt-scaled operator.
fn row_residual(op: &Tridiagonal, v: &[f64], rhs: f64, n: usize) -> f64 {
    let mut r = op.diag[n] * v[n] - rhs;
    if n > 0 {
        r += op.sub[n] * v[n - 1];
    }
    if n + 1 < v.len() {
        r += op.sup[n] * v[n + 1];
    }
    r
}

/// One implicit step for all regimes at time index `step`, given the rows at
/// `step + 1`. No obstacle projection is applied.
pub fn implicit_step(
    problem: &ValidatedProblem,
    grid: &Grid,
    terminal: TerminalSelector,
    step: usize,
    next: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, HjbError> {
    let t = grid.t(step);
    (0..problem.n_regimes())
        .map(|i| {
            let op = assemble_operator(problem, grid, i);
            let mut rhs: Vec<f64> = (0..grid.nx)
                .map(|n| next[i][n] + grid.dt * problem.eval_running(i, t, grid.x(n)))
                .collect();
            rhs[grid.nx - 1] = terminal.profile(problem, i).value_at(t, problem.horizon());
            let mut scratch = Vec::new();
            op.solve_into(&mut rhs, &mut scratch)
                .map_err(|e| HjbError::Singular {
                    step,
                    regime: i,
                    row: e.row,
                })?;
            Ok(rhs)
        })
        .collect()
}

/// Both branches of the discrete variational inequality at every node.
/// Entries outside the interior `0 <= m < nt`, `0 < n < nx - 1` are `NaN`.
#[derive(Debug, Clone)]
pub struct ComplementarityResidual {
    pub grid: Grid,
    pub n_regimes: usize,
    pub pde_residual: Vec<f64>,
    pub obstacle_gap: Vec<f64>,
    pub min_of_both: Vec<f64>,
}

impl ComplementarityResidual {
    /// Largest `|min(pde, gap)|` over interior nodes with its `(regime, m, n)`.
    pub fn max_abs(&self) -> (f64, (usize, usize, usize)) {
        let (nx, nt) = (self.grid.nx, self.grid.nt);
        let mut best = (0.0, (0, 0, 0));
        for (k, v) in self.min_of_both.iter().enumerate() {
            if v.is_finite() && v.abs() > best.0 {
                let n = k % nx;
                let m = (k / nx) % (nt + 1);
                let i = k / (nx * (nt + 1));
                best = (v.abs(), (i, m, n));
            }
        }
        best
    }

    pub fn get(&self, i: usize, m: usize, n: usize) -> f64 {
        self.min_of_both[(i * (self.grid.nt + 1) + m) * self.grid.nx + n]
    }

    /// Nodes whose `|min|` exceeds `tol`.
    pub fn flagged(&self, tol: f64) -> Vec<(usize, usize, usize)> {
        let (nx, nt) = (self.grid.nx, self.grid.nt);
        self.min_of_both
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite() && v.abs() > tol)
            .map(|(k, _)| (k / (nx * (nt + 1)), (k / nx) % (nt + 1), k % nx))
            .collect()
    }
}

/// Recomputes the PDE residual and the obstacle gap of a solved field.
pub fn residual(v: &ValueField) -> ComplementarityResidual {
    let grid = *v.grid();
    let problem = v.problem();
    let m = problem.n_regimes();
    let table = SwitchTable::build(problem, &grid);
    let len = m * grid.nodes_per_slice();
    let mut pde = vec![f64::NAN; len];
    let mut gap = vec![f64::NAN; len];
    let mut both = vec![f64::NAN; len];
    let mut node = vec![0.0; m];
    let (dx, dt) = (grid.dx, grid.dt);
    for step in 0..grid.nt {
        for n in 1..grid.nx - 1 {
            for (i, val) in node.iter_mut().enumerate() {
                *val = v.get(i, step, n);
            }
            for i in 0..m {
                let r = problem.regime(i);
                let here = node[i];
                let right = v.get(i, step, n + 1);
                let left = v.get(i, step, n - 1);
                let later = v.get(i, step + 1, n);
                let f = problem.eval_running(i, grid.t(step), grid.x(n));
                let p = -(later - here) / dt
                    - r.drift * (right - here) / dx
                    - r.diffusion * (right - 2.0 * here + left) / (dx * dx)
                    + r.mortality * here
                    - f;
                let g = table
                    .obstacle(n, i, &node)
                    .map_or(f64::INFINITY, |ob| here - ob);
                let k = (i * (grid.nt + 1) + step) * grid.nx + n;
                pde[k] = p;
                gap[k] = g;
                both[k] = p.min(g);
            }
        }
    }
    ComplementarityResidual {
        grid,
        n_regimes: m,
        pde_residual: pde,
        obstacle_gap: gap,
        min_of_both: both,
    }
}
