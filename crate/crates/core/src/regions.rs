//! Switching and continuation regions extracted from a solved value field,
//! and the feedback policy they induce.

use serde::Serialize;

use crate::hjb::{Grid, SwitchTable, ValueField};

/// Relative equality tolerance, multiplied by the value range of the field.
pub const RELATIVE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "action", content = "to", rename_all = "snake_case")]
pub enum Action {
    Stay,
    Switch(usize),
}

/// Boolean masks `S_ij` on the lattice, laid out `[from][to][time][space]`.
///
/// The terminal row `m = nt` and the absorbing column `n = nx - 1` are never
/// part of a switching region.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingRegions {
    n_regimes: usize,
    grid: Grid,
    tol_bits: u64,
    masks: Vec<bool>,
}

impl SwitchingRegions {
    /// Regions with every mask empty.
    pub fn empty(grid: Grid, n_regimes: usize) -> Self {
        SwitchingRegions {
            n_regimes,
            grid,
            tol_bits: 0f64.to_bits(),
            masks: vec![false; n_regimes * n_regimes * grid.nodes_per_slice()],
        }
    }

    #[inline]
    fn index(&self, i: usize, j: usize, m: usize, n: usize) -> usize {
        ((i * self.n_regimes + j) * (self.grid.nt + 1) + m) * self.grid.nx + n
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_regimes(&self) -> usize {
        self.n_regimes
    }

    pub fn tolerance(&self) -> f64 {
        f64::from_bits(self.tol_bits)
    }

    #[inline]
    pub fn contains(&self, i: usize, j: usize, m: usize, n: usize) -> bool {
        self.masks[self.index(i, j, m, n)]
    }

    pub fn set(&mut self, i: usize, j: usize, m: usize, n: usize, value: bool) {
        let k = self.index(i, j, m, n);
        self.masks[k] = value;
    }

    /// Node is in `S_i`, the union of `S_ij` over `j != i`.
    pub fn in_switching_set(&self, i: usize, m: usize, n: usize) -> bool {
        (0..self.n_regimes).any(|j| j != i && self.contains(i, j, m, n))
    }

    /// Node is in the continuation region `C_i`.
    pub fn in_continuation(&self, i: usize, m: usize, n: usize) -> bool {
        !self.in_switching_set(i, m, n)
    }

    /// Number of nodes in `S_ij`.
    pub fn count(&self, i: usize, j: usize) -> usize {
        let start = self.index(i, j, 0, 0);
        self.masks[start..start + self.grid.nodes_per_slice()]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    /// Number of nodes in `S_ij` whose position lies in `[lo, hi]`.
    pub fn count_within(&self, i: usize, j: usize, lo: f64, hi: f64) -> usize {
        let slack = 1e-9 * (hi - lo).abs().max(1.0);
        let cols: Vec<usize> = (0..self.grid.nx)
            .filter(|&n| {
                let x = self.grid.x(n);
                x >= lo - slack && x <= hi + slack
            })
            .collect();
        (0..=self.grid.nt)
            .map(|m| cols.iter().filter(|&&n| self.contains(i, j, m, n)).count())
            .sum()
    }

    /// One `(from, to)` mask as a `[time][space]` slice.
    pub fn mask(&self, i: usize, j: usize) -> &[bool] {
        let start = self.index(i, j, 0, 0);
        &self.masks[start..start + self.grid.nodes_per_slice()]
    }

    /// Action at lattice node `(m, n)` for a path currently in regime `i`.
    pub fn action_at(&self, m: usize, n: usize, i: usize) -> Action {
        (0..self.n_regimes)
            .find(|&j| j != i && self.contains(i, j, m, n))
            .map_or(Action::Stay, Action::Switch)
    }
}

/// `RELATIVE_TOLERANCE` times the value range of the field, floored so the
/// tolerance stays positive for constant fields.
pub fn default_tolerance(v: &ValueField) -> f64 {
    let (lo, hi) = v.range();
    RELATIVE_TOLERANCE * (hi - lo).max(1e-6)
}

/// Node `(m, n)` belongs to `S_ij` when `j` is allowed there,
/// `V_i <= V_j - h_ij + tol`, and `V_j - h_ij` is within `tol` of the best
/// allowed alternative.
pub fn extract_regions(v: &ValueField, tol: f64) -> SwitchingRegions {
    assert!(tol > 0.0, "region tolerance must be positive");
    let grid = *v.grid();
    let m = v.n_regimes();
    let table = SwitchTable::build(v.problem(), &grid);
    let mut regions = SwitchingRegions::empty(grid, m);
    regions.tol_bits = tol.to_bits();
    let mut node = vec![0.0; m];
    for step in 0..grid.nt {
        for n in 0..grid.nx - 1 {
            for (i, val) in node.iter_mut().enumerate() {
                *val = v.get(i, step, n);
            }
            for i in 0..m {
                let Some(best) = table.obstacle(n, i, &node) else {
                    continue;
                };
                if node[i] > best + tol {
                    continue;
                }
                for j in 0..m {
                    if let Some(h) = table.cost(n, i, j) {
                        if node[j] - h >= best - tol {
                            regions.set(i, j, step, n, true);
                        }
                    }
                }
            }
        }
    }
    regions
}

/// Nearest-node policy lookup at `(t, x)` for a path in regime `i`. Ties
/// among optimal targets go to the smallest regime index.
pub fn policy(regions: &SwitchingRegions, t: f64, x: f64, i: usize) -> Action {
    let g = regions.grid();
    regions.action_at(g.nearest_step(t), g.nearest_node(x), i)
}

/// Cells of `S_ij` with at least one 4-neighbour outside the mask or on the
/// lattice border, in lexicographic `(m, n)` order.
pub fn region_boundary(regions: &SwitchingRegions, i: usize, j: usize) -> Vec<(usize, usize)> {
    let g = regions.grid();
    let (nt, nx) = (g.nt, g.nx);
    let inside = |m: usize, n: usize| regions.contains(i, j, m, n);
    let mut cells = Vec::new();
    for m in 0..=nt {
        for n in 0..nx {
            if !inside(m, n) {
                continue;
            }
            let border = m == 0 || n == 0 || m == nt || n + 1 == nx;
            let edge = border
                || !inside(m - 1, n)
                || !inside(m + 1, n)
                || !inside(m, n - 1)
                || !inside(m, n + 1);
            if edge {
                cells.push((m, n));
            }
        }
    }
    cells
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjb::{solve_backward, TerminalSelector};
    use crate::model::{validate_problem, Feasibility, RewardProfile, SwitchingCosts};
    use crate::presets;

    fn small_problem() -> crate::model::ValidatedProblem {
        let mut spec = presets::table2();
        spec.terminal_perceived = RewardProfile::Constant { value: 0.0 };
        spec.terminal_actual = RewardProfile::Constant { value: 0.0 };
        for s in &mut spec.sites {
            s.staging_reward = 0.0;
        }
        validate_problem(&spec).unwrap()
    }

    #[test]
    fn zero_problem_has_no_regions() {
        let p = small_problem();
        let grid = Grid::for_problem(&p, 21, 20).unwrap();
        let v = solve_backward(&p, &grid, TerminalSelector::Model).unwrap();
        let r = extract_regions(&v, default_tolerance(&v));
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(r.count(i, j), 0);
            }
        }
    }

    fn everywhere_problem() -> crate::model::ValidatedProblem {
        let mut spec = presets::table2();
        let mut costs = SwitchingCosts::uniform(3, 0.05);
        costs.feasibility[1] = vec![
            Feasibility::Never,
            Feasibility::Everywhere,
            Feasibility::Never,
        ];
        spec.costs = costs;
        validate_problem(&spec).unwrap()
    }

    fn hand_field(values: [f64; 3]) -> (ValueField, Grid) {
        let p = everywhere_problem();
        let grid = Grid::for_problem(&p, 5, 2).unwrap();
        let mut data = vec![0.0; 3 * grid.nodes_per_slice()];
        for (i, v) in values.iter().enumerate() {
            for k in 0..grid.nodes_per_slice() {
                data[i * grid.nodes_per_slice() + k] = *v;
            }
        }
        // make node (0, 2) differ from the rest so only it switches
        (
            ValueField::from_values(p, grid, TerminalSelector::Model, data).unwrap(),
            grid,
        )
    }

    #[test]
    fn exact_equality_lands_in_one_mask() {
        let (mut v, _) = hand_field([1.0, 0.5, 1.0]);
        // V_1 = V_3 - h_13 exactly at one node.
        v.set(2, 0, 2, 1.05);
        let r = extract_regions(&v, 1e-9);
        assert!(r.contains(0, 2, 0, 2));
        assert!(!r.contains(0, 1, 0, 2));
        assert_eq!(r.count(0, 2), 1);
        assert_eq!(policy(&r, 0.0, v.grid().x(2), 0), Action::Switch(2));
        assert_eq!(policy(&r, 0.0, v.grid().x(1), 0), Action::Stay);
    }

    #[test]
    fn double_tie_breaks_to_smaller_index() {
        let (mut v, _) = hand_field([1.0, 0.5, 0.5]);
        v.set(1, 0, 2, 1.05);
        v.set(2, 0, 2, 1.05);
        let r = extract_regions(&v, 1e-9);
        assert!(r.contains(0, 1, 0, 2) && r.contains(0, 2, 0, 2));
        assert_eq!(r.action_at(0, 2, 0), Action::Switch(1));
    }

    #[test]
    fn direct_flight_never_switches() {
        let p = validate_problem(&presets::table2()).unwrap();
        let grid = Grid::for_problem(&p, 51, 140).unwrap();
        let v = solve_backward(&p, &grid, TerminalSelector::Model).unwrap();
        let r = extract_regions(&v, default_tolerance(&v));
        for m in 0..=grid.nt {
            for n in 0..grid.nx {
                assert!(!r.in_switching_set(1, m, n));
                assert_eq!(r.action_at(m, n, 1), Action::Stay);
            }
        }
    }

    #[test]
    fn boundary_of_simple_masks() {
        let grid = Grid::new(1.0, 1.0, 6, 5).unwrap();
        let mut r = SwitchingRegions::empty(grid, 2);
        assert!(region_boundary(&r, 0, 1).is_empty());
        r.set(0, 1, 2, 3, true);
        assert_eq!(region_boundary(&r, 0, 1), vec![(2, 3)]);
        for m in 0..=grid.nt {
            for n in 0..grid.nx {
                r.set(0, 1, m, n, true);
            }
        }
        let b = region_boundary(&r, 0, 1);
        assert!(b
            .iter()
            .all(|&(m, n)| m == 0 || n == 0 || m == grid.nt || n == grid.nx - 1));
        assert_eq!(b.len(), 2 * grid.nx + 2 * (grid.nt + 1) - 4);
        let mut sorted = b.clone();
        sorted.sort();
        assert_eq!(sorted, b);
    }
}
