//! Entropic OT by alternating marginal scaling.
//!
//! Iterates in the scaling domain (`u = a / Kv`, `v = b / K^T u`) while every
//! scaling factor stays inside `[1e-30, 1e30]`, then continues from the last
//! good iterate with log-sum-exp updates of the potentials `f = eps ln u`,
//! `g = eps ln v`.
//!
//! The returned plan is rounded onto the transportation polytope, so its
//! marginals are exact up to rounding error and its cost upper-bounds the
//! exact OT cost.

use super::{check_dimensions, CostMatrix, DiscreteDistribution, OtSolution, TransportPlan};
use crate::error::{Error, Result};

const SCALING_BOUND: f64 = 1e30;

#[derive(Debug, Clone, Copy)]
pub struct RegularizedOptions {
    pub epsilon: f64,
    pub max_iter: usize,
    /// L1 marginal residual at which iteration stops.
    pub tol: f64,
}

impl RegularizedOptions {
    pub fn default_epsilon(c: &CostMatrix) -> f64 {
        let m = c.max();
        if m > 0.0 {
            1e-2 * m
        } else {
            1e-2
        }
    }

    pub fn for_cost(c: &CostMatrix) -> Self {
        Self {
            epsilon: Self::default_epsilon(c),
            ..Self::default()
        }
    }
}

impl Default for RegularizedOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-2,
            max_iter: 10_000,
            tol: 1e-9,
        }
    }
}

pub fn solve_regularized(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    c: &CostMatrix,
    opts: &RegularizedOptions,
) -> Result<OtSolution> {
    check_dimensions(mu, nu, c)?;
    if !(opts.epsilon > 0.0 && opts.epsilon.is_finite()) {
        return Err(Error::invalid(format!(
            "epsilon must be positive, got {}",
            opts.epsilon
        )));
    }
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let n = c.n();
    let rows = mu.support();
    let cols = nu.support();
    let a: Vec<f64> = rows.iter().map(|&i| mu.weight(i)).collect();
    let b: Vec<f64> = cols.iter().map(|&j| nu.weight(j)).collect();
    let (m, k) = (a.len(), b.len());
    let mut cost = Vec::with_capacity(m * k);
    for &i in &rows {
        for &j in &cols {
            cost.push(c.get(i, j));
        }
    }
    let problem = Scaling {
        a,
        b,
        cost,
        eps: opts.epsilon,
        m,
        k,
    };

    let (f, g, iterations) = problem.run(opts)?;

    let reduced = problem.feasible_plan(&f, &g);
    let mut coupling = vec![0.0; n * n];
    for (x, &i) in rows.iter().enumerate() {
        for (y, &j) in cols.iter().enumerate() {
            coupling[i * n + j] = reduced[x * k + y];
        }
    }
    let mut dual_source = vec![f64::NAN; n];
    let mut dual_target = vec![f64::NAN; n];
    for (x, &i) in rows.iter().enumerate() {
        dual_source[i] = f[x];
    }
    for (y, &j) in cols.iter().enumerate() {
        dual_target[j] = g[y];
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
    let cost = plan.cost(c);
    Ok(OtSolution {
        plan,
        cost,
        dual_source,
        dual_target,
        iterations,
        exact: false,
    })
}

struct Scaling {
    a: Vec<f64>,
    b: Vec<f64>,
    cost: Vec<f64>,
    eps: f64,
    m: usize,
    k: usize,
}

impl Scaling {
    #[inline]
    fn entry(&self, f: &[f64], g: &[f64], i: usize, j: usize) -> f64 {
        ((f[i] + g[j] - self.cost[i * self.k + j]) / self.eps).exp()
    }

    /// Returns log-domain potentials and the iteration count.
    fn run(&self, opts: &RegularizedOptions) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        match self.run_scaling(opts)? {
            ScalingOutcome::Converged { f, g, iterations } => Ok((f, g, iterations)),
            ScalingOutcome::Unstable { f, g, iterations } => {
                log::debug!("scaling factors left safe range after {iterations} iterations; switching to log domain");
                self.run_log(f, g, iterations, opts)
            }
        }
    }

    fn run_scaling(&self, opts: &RegularizedOptions) -> Result<ScalingOutcome> {
        let (m, k) = (self.m, self.k);
        let kernel: Vec<f64> = self.cost.iter().map(|c| (-c / self.eps).exp()).collect();
        let mut u = vec![1.0; m];
        let mut v = vec![1.0; k];
        let to_log = |u: &[f64], v: &[f64]| -> (Vec<f64>, Vec<f64>) {
            (
                u.iter().map(|x| self.eps * x.ln()).collect(),
                v.iter().map(|x| self.eps * x.ln()).collect(),
            )
        };
        let in_range = |x: &f64| x.is_finite() && *x >= 1.0 / SCALING_BOUND && *x <= SCALING_BOUND;
        let mut residual = f64::INFINITY;
        for it in 0..opts.max_iter {
            // Row sums of the current plan are u_i (Kv)_i; columns were matched last step.
            let kv: Vec<f64> = (0..m)
                .map(|i| (0..k).map(|j| kernel[i * k + j] * v[j]).sum())
                .collect();
            if it > 0 {
                residual = (0..m).map(|i| (u[i] * kv[i] - self.a[i]).abs()).sum();
                if residual <= opts.tol {
                    let (f, g) = to_log(&u, &v);
                    return Ok(ScalingOutcome::Converged { f, g, iterations: it });
                }
            }
            let new_u: Vec<f64> = (0..m).map(|i| self.a[i] / kv[i]).collect();
            if !new_u.iter().all(in_range) {
                let (f, g) = to_log(&u, &v);
                return Ok(ScalingOutcome::Unstable { f, g, iterations: it });
            }
            let new_v: Vec<f64> = (0..k)
                .map(|j| {
                    let ku: f64 = (0..m).map(|i| kernel[i * k + j] * new_u[i]).sum();
                    self.b[j] / ku
                })
                .collect();
            if !new_v.iter().all(in_range) {
                let (f, g) = to_log(&new_u, &v);
                return Ok(ScalingOutcome::Unstable { f, g, iterations: it });
            }
            u = new_u;
            v = new_v;
        }
        Err(Error::ConvergenceFailure {
            what: "regularized transport",
            iterations: opts.max_iter,
            residual,
        })
    }

    fn run_log(
        &self,
        mut f: Vec<f64>,
        mut g: Vec<f64>,
        start: usize,
        opts: &RegularizedOptions,
    ) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        let (m, k, eps) = (self.m, self.k, self.eps);
        let ln_a: Vec<f64> = self.a.iter().map(|x| x.ln()).collect();
        let ln_b: Vec<f64> = self.b.iter().map(|x| x.ln()).collect();
        let mut scratch = vec![0.0; m.max(k)];
        let mut lse = vec![0.0; m];
        let mut residual = f64::INFINITY;
        let mut fresh = true;
        for it in start..opts.max_iter {
            for (i, l) in lse.iter_mut().enumerate() {
                for j in 0..k {
                    scratch[j] = (g[j] - self.cost[i * k + j]) / eps;
                }
                *l = log_sum_exp(&scratch[..k]);
            }
            if !fresh {
                residual = (0..m)
                    .map(|i| ((f[i] / eps + lse[i]).exp() - self.a[i]).abs())
                    .sum();
                if residual <= opts.tol {
                    return Ok((f, g, it));
                }
            }
            fresh = false;
            for i in 0..m {
                f[i] = eps * (ln_a[i] - lse[i]);
            }
            for j in 0..k {
                for i in 0..m {
                    scratch[i] = (f[i] - self.cost[i * k + j]) / eps;
                }
                g[j] = eps * (ln_b[j] - log_sum_exp(&scratch[..m]));
            }
            if f.iter().chain(&g).any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!(
                    "entropic potentials became non-finite at iteration {it}; try a larger epsilon"
                )));
            }
        }
        Err(Error::ConvergenceFailure {
            what: "regularized transport",
            iterations: opts.max_iter,
            residual,
        })
    }

    /// Plan from potentials, projected onto the exact marginals: rows and
    /// columns are scaled down where they overshoot, then the missing mass is
    /// restored with a rank-one correction. Moves at most twice the L1
    /// residual of mass.
    fn feasible_plan(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        let (m, k) = (self.m, self.k);
        let mut plan = Vec::with_capacity(m * k);
        for i in 0..m {
            for j in 0..k {
                plan.push(self.entry(f, g, i, j));
            }
        }
        for i in 0..m {
            let row: f64 = plan[i * k..(i + 1) * k].iter().sum();
            if row > self.a[i] {
                let s = self.a[i] / row;
                plan[i * k..(i + 1) * k].iter_mut().for_each(|x| *x *= s);
            }
        }
        for j in 0..k {
            let col: f64 = (0..m).map(|i| plan[i * k + j]).sum();
            if col > self.b[j] {
                let s = self.b[j] / col;
                (0..m).for_each(|i| plan[i * k + j] *= s);
            }
        }
        let row_gap: Vec<f64> = (0..m)
            .map(|i| (self.a[i] - plan[i * k..(i + 1) * k].iter().sum::<f64>()).max(0.0))
            .collect();
        let col_gap: Vec<f64> = (0..k)
            .map(|j| (self.b[j] - (0..m).map(|i| plan[i * k + j]).sum::<f64>()).max(0.0))
            .collect();
        let missing: f64 = row_gap.iter().sum();
        if missing > 0.0 {
            for i in 0..m {
                for j in 0..k {
                    plan[i * k + j] += row_gap[i] * col_gap[j] / missing;
                }
            }
        }
        plan
    }
}

enum ScalingOutcome {
    Converged {
        f: Vec<f64>,
        g: Vec<f64>,
        iterations: usize,
    },
    Unstable {
        f: Vec<f64>,
        g: Vec<f64>,
        iterations: usize,
    },
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
