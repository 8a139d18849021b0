//! Transportation simplex.
//!
//! The basis is a spanning tree over the bipartite graph of source rows and
//! target columns (`m + k - 1` cells). Each pivot prices every nonbasic cell
//! with the tree potentials, brings in the most negative reduced cost, and
//! pushes flow around the unique cycle it closes. After a run of degenerate
//! pivots the entering/leaving choice switches to Bland's lowest-index rule,
//! which cannot cycle.

use std::collections::VecDeque;

use super::{check_dimensions, CostMatrix, DiscreteDistribution, OtSolution, TransportPlan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct ExactOptions {
    pub max_pivots: usize,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self { max_pivots: 100_000 }
    }
}

pub fn solve_exact(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    c: &CostMatrix,
) -> Result<OtSolution> {
    solve_exact_with(mu, nu, c, &ExactOptions::default())
}

pub fn solve_exact_with(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    c: &CostMatrix,
    opts: &ExactOptions,
) -> Result<OtSolution> {
    check_dimensions(mu, nu, c)?;
    let n = c.n();

    // Zero-mass states never carry flow; drop them from the LP.
    let rows = mu.support();
    let cols = nu.support();
    let mut problem = Transportation::new(
        rows.iter().map(|&i| mu.weight(i)).collect(),
        cols.iter().map(|&j| nu.weight(j)).collect(),
        |i, j| c.get(rows[i], cols[j]),
    );
    let pivots = problem.optimize(opts.max_pivots)?;
    let (u_active, v_active) = problem.potentials();

    let mut coupling = vec![0.0; n * n];
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            coupling[i * n + j] = problem.flow[a * problem.k + b];
        }
    }

    // Potentials of excluded states: c-transforms, which keep dual feasibility
    // and contribute nothing to the dual objective.
    let mut dual_source = vec![f64::NAN; n];
    let mut dual_target = vec![f64::NAN; n];
    for (a, &i) in rows.iter().enumerate() {
        dual_source[i] = u_active[a];
    }
    for (b, &j) in cols.iter().enumerate() {
        dual_target[j] = v_active[b];
    }
    for i in 0..n {
        if dual_source[i].is_nan() {
            dual_source[i] = cols
                .iter()
                .map(|&j| c.get(i, j) - dual_target[j])
                .fold(f64::INFINITY, f64::min);
        }
    }
    for j in 0..n {
        if dual_target[j].is_nan() {
            dual_target[j] = (0..n)
                .map(|i| c.get(i, j) - dual_source[i])
                .fold(f64::INFINITY, f64::min);
        }
    }

    let plan = TransportPlan::from_flat(n, coupling);
    let cost = plan.cost(c).max(0.0);
    Ok(OtSolution {
        plan,
        cost,
        dual_source,
        dual_target,
        iterations: pivots,
        exact: true,
    })
}

/// Balanced transportation problem on strictly positive supplies/demands.
struct Transportation {
    m: usize,
    k: usize,
    cost: Vec<f64>,
    flow: Vec<f64>,
    basic: Vec<bool>,
    basis: Vec<usize>,
    optimality_tol: f64,
}

impl Transportation {
    fn new(supply: Vec<f64>, demand: Vec<f64>, cost_of: impl Fn(usize, usize) -> f64) -> Self {
        let m = supply.len();
        let k = demand.len();
        let mut cost = Vec::with_capacity(m * k);
        for i in 0..m {
            for j in 0..k {
                cost.push(cost_of(i, j));
            }
        }
        let scale = cost.iter().copied().fold(1.0, f64::max);
        let mut t = Self {
            m,
            k,
            cost,
            flow: vec![0.0; m * k],
            basic: vec![false; m * k],
            basis: Vec::with_capacity(m + k - 1),
            optimality_tol: 1e-12 * scale,
        };
        t.northwest_corner(supply, demand);
        t
    }

    /// Staircase initial basis; always yields exactly `m + k - 1` basic cells.
    fn northwest_corner(&mut self, mut supply: Vec<f64>, mut demand: Vec<f64>) {
        let (mut i, mut j) = (0, 0);
        loop {
            let x = supply[i].min(demand[j]);
            let cell = i * self.k + j;
            self.flow[cell] = x;
            self.basic[cell] = true;
            self.basis.push(cell);
            let row_done = supply[i] <= demand[j];
            supply[i] -= x;
            demand[j] -= x;
            if i + 1 == self.m && j + 1 == self.k {
                break;
            }
            if i + 1 == self.m {
                j += 1;
            } else if j + 1 == self.k || row_done {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    /// Tree adjacency: nodes `0..m` are rows, `m..m+k` are columns.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.k];
        for &cell in &self.basis {
            let (i, j) = (cell / self.k, cell % self.k);
            adj[i].push((self.m + j, cell));
            adj[self.m + j].push((i, cell));
        }
        adj
    }

    /// Solves `u_i + v_j = c_ij` on the basis tree with `u_0 = 0`.
    fn potentials(&self) -> (Vec<f64>, Vec<f64>) {
        let adj = self.adjacency();
        let mut pot = vec![f64::NAN; self.m + self.k];
        pot[0] = 0.0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(node) = queue.pop_front() {
            for &(next, cell) in &adj[node] {
                if pot[next].is_nan() {
                    pot[next] = self.cost[cell] - pot[node];
                    queue.push_back(next);
                }
            }
        }
        let v = pot.split_off(self.m);
        (pot, v)
    }

    fn optimize(&mut self, max_pivots: usize) -> Result<usize> {
        let degenerate_limit = 2 * (self.m + self.k);
        let mut degenerate_run = 0;
        let mut pivots = 0;
        loop {
            let (u, v) = self.potentials();
            let bland = degenerate_run > degenerate_limit;
            let Some(entering) = self.entering_cell(&u, &v, bland) else {
                return Ok(pivots);
            };
            if pivots == max_pivots {
                return Err(Error::SolverFailure { iterations: pivots });
            }
            let theta = self.pivot(entering);
            pivots += 1;
            if theta > 0.0 {
                degenerate_run = 0;
            } else {
                degenerate_run += 1;
            }
        }
    }

    fn entering_cell(&self, u: &[f64], v: &[f64], bland: bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.m {
            for j in 0..self.k {
                let cell = i * self.k + j;
                if self.basic[cell] {
                    continue;
                }
                let reduced = self.cost[cell] - u[i] - v[j];
                if reduced >= -self.optimality_tol {
                    continue;
                }
                if bland {
                    return Some(cell);
                }
                if best.is_none_or(|(_, r)| reduced < r) {
                    best = Some((cell, reduced));
                }
            }
        }
        best.map(|(cell, _)| cell)
    }

    /// Pushes flow around the cycle closed by `entering`; returns the step size.
    fn pivot(&mut self, entering: usize) -> f64 {
        let (p, q) = (entering / self.k, entering % self.k);
        let adj = self.adjacency();

        // Tree path from column q to row p.
        let start = self.m + q;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; self.m + self.k];
        let mut seen = vec![false; self.m + self.k];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == p {
                break;
            }
            for &(next, cell) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, cell));
                    queue.push_back(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = p;
        while node != start {
            let (prev, cell) = parent[node].expect("basis is a spanning tree");
            path.push(cell);
            node = prev;
        }
        path.reverse();

        // Cells at even positions (starting next to column q) lose flow.
        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        for &cell in path.iter().step_by(2) {
            let f = self.flow[cell];
            if f < theta || (f == theta && cell < leaving) {
                theta = f;
                leaving = cell;
            }
        }
        let theta = theta.max(0.0);

        self.flow[entering] = theta;
        for (pos, &cell) in path.iter().enumerate() {
            if pos % 2 == 0 {
                self.flow[cell] = (self.flow[cell] - theta).max(0.0);
            } else {
                self.flow[cell] += theta;
            }
        }
        self.flow[leaving] = 0.0;
        self.basic[leaving] = false;
        self.basic[entering] = true;
        let slot = self
            .basis
            .iter()
            .position(|&c| c == leaving)
            .expect("leaving cell is basic");
        self.basis[slot] = entering;
        theta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::build_cost_matrix;

    fn line(n: usize) -> CostMatrix {
        build_cost_matrix((0..n).map(|i| vec![i as f64]).collect()).unwrap()
    }

    fn assert_certified(sol: &OtSolution, mu: &DiscreteDistribution, nu: &DiscreteDistribution, c: &CostMatrix) {
        let (r, col) = sol.plan.marginal_residuals(mu, nu);
        assert!(r <= 1e-9 && col <= 1e-9, "marginals {r} {col}");
        assert!(sol.dual_infeasibility(c) <= 1e-9);
        assert!(sol.relative_duality_gap(mu, nu) <= 1e-8);
        assert!((sol.cost - sol.plan.cost(c)).abs() <= 1e-9 * sol.cost.max(1.0));
        assert!(sol.exact);
    }

    #[test]
    fn identical_marginals_cost_nothing() {
        let c = line(4);
        let mu = DiscreteDistribution::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let sol = solve_exact(&mu, &mu, &c).unwrap();
        assert!(sol.cost.abs() < 1e-15);
        assert_certified(&sol, &mu, &mu, &c);
    }

    #[test]
    fn dirac_to_dirac_is_forced() {
        let c = line(3);
        let mu = DiscreteDistribution::dirac(3, 0).unwrap();
        let nu = DiscreteDistribution::dirac(3, 1).unwrap();
        let sol = solve_exact(&mu, &nu, &c).unwrap();
        assert_eq!(sol.cost, c.get(0, 1));
        assert_eq!(sol.plan.get(0, 1), 1.0);
        assert_certified(&sol, &mu, &nu, &c);
    }

    #[test]
    fn three_state_line_regression() {
        // Pinned from an exhaustive vertex enumeration of the 3x3 polytope.
        let c = line(3);
        let mu = DiscreteDistribution::new(vec![0.5, 0.3, 0.2]).unwrap();
        let nu = DiscreteDistribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        let sol = solve_exact(&mu, &nu, &c).unwrap();
        assert!((sol.cost - 0.6).abs() < 1e-12, "cost {}", sol.cost);
        assert_certified(&sol, &mu, &nu, &c);
    }

    #[test]
    fn zero_mass_states_get_feasible_potentials() {
        let c = line(5);
        let mu = DiscreteDistribution::new(vec![0.0, 0.5, 0.0, 0.5, 0.0]).unwrap();
        let nu = DiscreteDistribution::new(vec![0.25, 0.0, 0.5, 0.0, 0.25]).unwrap();
        let sol = solve_exact(&mu, &nu, &c).unwrap();
        assert!(sol.dual_source.iter().chain(&sol.dual_target).all(|x| x.is_finite()));
        assert_certified(&sol, &mu, &nu, &c);
        for i in [0, 2, 4] {
            assert!(sol.plan.row_sums()[i] == 0.0);
        }
    }

    #[test]
    fn pivot_budget_is_enforced() {
        // Northwest corner puts all mass on the expensive diagonal.
        let c = CostMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mu = DiscreteDistribution::uniform(2).unwrap();
        let err = solve_exact_with(&mu, &mu, &c, &ExactOptions { max_pivots: 0 }).unwrap_err();
        assert!(matches!(err, Error::SolverFailure { iterations: 0 }));
        let sol = solve_exact(&mu, &mu, &c).unwrap();
        assert_eq!(sol.cost, 0.0);
        assert!(sol.iterations >= 1);
    }

    #[test]
    fn dimension_mismatch_is_invalid_input() {
        let c = line(3);
        let mu = DiscreteDistribution::uniform(2).unwrap();
        let nu = DiscreteDistribution::uniform(3).unwrap();
        assert!(matches!(solve_exact(&mu, &nu, &c), Err(Error::InvalidInput(_))));
    }
}
