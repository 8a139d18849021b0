//! Discrete optimal transport over finite state spaces.
//!
//! Two solvers share one output type, [`OtSolution`]:
//!
//! * [`solve_exact`] solves the transportation linear program with a
//!   network-simplex style pivoting scheme and reports optimal dual
//!   potentials alongside the plan.
//! * [`solve_regularized`] runs entropic alternating marginal scaling and
//!   switches to log-domain updates when the scaling factors leave a safe
//!   floating-point range.
//!
//! Ground costs come from [`build_cost_matrix`], which evaluates squared
//! Euclidean distances between state embeddings.

mod exact;
mod sinkhorn;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use exact::{solve_exact, solve_exact_with, ExactOptions};
pub use sinkhorn::{solve_regularized, RegularizedOptions};

/// Tolerance used when validating that a vector already is a distribution.
pub const VALIDATION_TOLERANCE: f64 = 1e-9;

/// A probability vector over `n` states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DiscreteDistribution {
    weights: Vec<f64>,
}

impl DiscreteDistribution {
    /// Builds a distribution from nonnegative weights, normalizing them to sum to one.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("distribution must have at least one state"));
        }
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(Error::invalid(format!(
                "weight {i} is {w}; weights must be finite and nonnegative"
            )));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("weights sum to zero"));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { weights })
    }

    /// Like [`DiscreteDistribution::new`] but rejects vectors whose sum deviates
    /// from one by more than [`VALIDATION_TOLERANCE`].
    pub fn from_probabilities(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > VALIDATION_TOLERANCE {
            return Err(Error::invalid(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Self::new(weights)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0; n])
    }

    pub fn dirac(n: usize, state: usize) -> Result<Self> {
        if state >= n {
            return Err(Error::invalid(format!(
                "dirac state {state} out of range for {n} states"
            )));
        }
        let mut weights = vec![0.0; n];
        weights[state] = 1.0;
        Ok(Self { weights })
    }

    /// Uniform over `support`, zero elsewhere.
    pub fn uniform_over(n: usize, support: &[usize]) -> Result<Self> {
        let mut weights = vec![0.0; n];
        for &s in support {
            if s >= n {
                return Err(Error::invalid(format!("state {s} out of range for {n} states")));
            }
            weights[s] = 1.0;
        }
        Self::new(weights)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, state: usize) -> f64 {
        self.weights[state]
    }

    /// Indices carrying positive mass.
    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.weights[i] > 0.0).collect()
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    /// Relabels states: the returned distribution puts `self[i]` at `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut weights = vec![0.0; self.len()];
        for (i, &p) in perm.iter().enumerate() {
            weights[p] = self.weights[i];
        }
        Self { weights }
    }
}

impl TryFrom<Vec<f64>> for DiscreteDistribution {
    type Error = Error;

    fn try_from(weights: Vec<f64>) -> Result<Self> {
        Self::new(weights)
    }
}

impl From<DiscreteDistribution> for Vec<f64> {
    fn from(d: DiscreteDistribution) -> Self {
        d.weights
    }
}

/// Coordinates of every state in a common Euclidean space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEmbedding {
    points: Vec<Vec<f64>>,
}

impl StateEmbedding {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::invalid("embedding needs at least one state"));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be at least 1"));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::invalid(format!(
                    "state {i} has embedding dimension {}, expected {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("state {i} has a non-finite coordinate")));
            }
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn point(&self, state: usize) -> &[f64] {
        &self.points[state]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn cost_matrix(&self) -> CostMatrix {
        let n = self.len();
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d: f64 = self.points[i]
                    .iter()
                    .zip(&self.points[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                entries[i * n + j] = d;
                entries[j * n + i] = d;
            }
        }
        CostMatrix { n, entries }
    }
}

/// Squared Euclidean ground cost between embedded states.
pub fn build_cost_matrix(points: Vec<Vec<f64>>) -> Result<CostMatrix> {
    Ok(StateEmbedding::new(points)?.cost_matrix())
}

/// Square matrix of nonnegative transport costs, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::invalid("cost matrix must be nonempty"));
        }
        let mut entries = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::invalid(format!(
                    "cost matrix row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            entries.extend(row);
        }
        Self::from_flat(n, entries)
    }

    pub fn from_flat(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 || entries.len() != n * n {
            return Err(Error::invalid(format!(
                "expected {} cost entries for n = {n}, got {}",
                n * n,
                entries.len()
            )));
        }
        if let Some(k) = entries.iter().position(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::invalid(format!(
                "cost entry ({}, {}) is {}; costs must be finite and nonnegative",
                k / n,
                k % n,
                entries[k]
            )));
        }
        Ok(Self { n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn max(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }

    /// Divides every entry by the largest one; an all-zero matrix is returned unchanged.
    pub fn normalized_by_max(&self) -> Self {
        let m = self.max();
        if m == 0.0 {
            return self.clone();
        }
        Self {
            n: self.n,
            entries: self.entries.iter().map(|c| c / m).collect(),
        }
    }

    pub fn transposed(&self) -> Self {
        let n = self.n;
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                entries[j * n + i] = self.entries[i * n + j];
            }
        }
        Self { n, entries }
    }

    /// Relabels states consistently with [`DiscreteDistribution::permuted`].
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                entries[perm[i] * n + perm[j]] = self.entries[i * n + j];
            }
        }
        Self { n, entries }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }
}

/// A coupling between two distributions, stored row-major (source × target).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    n: usize,
    coupling: Vec<f64>,
}

impl TransportPlan {
    pub(crate) fn from_flat(n: usize, coupling: Vec<f64>) -> Self {
        debug_assert_eq!(coupling.len(), n * n);
        Self { n, coupling }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.coupling[i * self.n + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.coupling
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.coupling.chunks(self.n).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for row in self.coupling.chunks(self.n) {
            for (s, x) in sums.iter_mut().zip(row) {
                *s += x;
            }
        }
        sums
    }

    /// Largest per-row and per-column deviation from the given marginals.
    pub fn marginal_residuals(
        &self,
        mu: &DiscreteDistribution,
        nu: &DiscreteDistribution,
    ) -> (f64, f64) {
        let rows = self
            .row_sums()
            .iter()
            .zip(mu.weights())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let cols = self
            .col_sums()
            .iter()
            .zip(nu.weights())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        (rows, cols)
    }

    /// L1 marginal residual summed over rows and columns.
    pub fn l1_marginal_residual(
        &self,
        mu: &DiscreteDistribution,
        nu: &DiscreteDistribution,
    ) -> f64 {
        let rows: f64 = self
            .row_sums()
            .iter()
            .zip(mu.weights())
            .map(|(a, b)| (a - b).abs())
            .sum();
        let cols: f64 = self
            .col_sums()
            .iter()
            .zip(nu.weights())
            .map(|(a, b)| (a - b).abs())
            .sum();
        rows + cols
    }

    /// Entrywise inner product with the ground cost.
    pub fn cost(&self, c: &CostMatrix) -> f64 {
        self.coupling
            .iter()
            .zip(c.entries())
            .map(|(x, c)| x * c)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OtSolution {
    pub plan: TransportPlan,
    pub cost: f64,
    pub dual_source: Vec<f64>,
    pub dual_target: Vec<f64>,
    pub iterations: usize,
    pub exact: bool,
}

impl OtSolution {
    pub fn dual_objective(&self, mu: &DiscreteDistribution, nu: &DiscreteDistribution) -> f64 {
        dot(mu.weights(), &self.dual_source) + dot(nu.weights(), &self.dual_target)
    }

    /// |primal − dual| / max(1, |primal|).
    pub fn relative_duality_gap(
        &self,
        mu: &DiscreteDistribution,
        nu: &DiscreteDistribution,
    ) -> f64 {
        (self.cost - self.dual_objective(mu, nu)).abs() / self.cost.abs().max(1.0)
    }

    /// Largest violation of `u_i + v_j <= C_ij`, zero when dual feasible.
    pub fn dual_infeasibility(&self, c: &CostMatrix) -> f64 {
        let n = c.n();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max(self.dual_source[i] + self.dual_target[j] - c.get(i, j));
            }
        }
        worst
    }
}

/// Which solver backs an OT evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "solver")]
pub enum OtSolverKind {
    #[default]
    Exact,
    /// Entropic solver; `epsilon` defaults to `1e-2 * max(C)`.
    Regularized { epsilon: Option<f64> },
}

impl OtSolverKind {
    pub fn solve(
        &self,
        mu: &DiscreteDistribution,
        nu: &DiscreteDistribution,
        c: &CostMatrix,
    ) -> Result<OtSolution> {
        match *self {
            OtSolverKind::Exact => solve_exact(mu, nu, c),
            OtSolverKind::Regularized { epsilon } => {
                let opts = RegularizedOptions {
                    epsilon: epsilon.unwrap_or_else(|| RegularizedOptions::default_epsilon(c)),
                    ..RegularizedOptions::default()
                };
                solve_regularized(mu, nu, c, &opts)
            }
        }
    }
}

/// Exact OT distance: the cost of an optimal plan.
pub fn ot_distance(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    c: &CostMatrix,
) -> Result<f64> {
    Ok(solve_exact(mu, nu, c)?.cost)
}

/// OT distance from the point mass at `state` to `target`. The only coupling
/// of a Dirac source is the product measure, so this is a weighted row sum.
pub fn pointwise_risk_cost(state: usize, target: &DiscreteDistribution, c: &CostMatrix) -> f64 {
    dot(c.row(state), target.weights())
}

pub(crate) fn check_dimensions(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    c: &CostMatrix,
) -> Result<()> {
    if mu.len() != c.n() || nu.len() != c.n() {
        return Err(Error::invalid(format!(
            "dimension mismatch: source has {} states, target {}, cost matrix is {}x{}",
            mu.len(),
            nu.len(),
            c.n(),
            c.n()
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
