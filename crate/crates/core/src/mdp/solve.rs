use nalgebra::{DMatrix, DVector};

use super::{Policy, TabularMdp};
use crate::error::{Error, Result};
use crate::ot::DiscreteDistribution;

/// L1 fixed-point residual targeted by the visitation-distribution solvers.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-10;

const MAX_SWEEPS: usize = 1_000_000;
const GREEDY_TIE_TOLERANCE: f64 = 1e-9;

/// Sup-norm residual of the policy Bellman equation `V = r_π + γ P_π V`.
pub fn bellman_residual(mdp: &TabularMdp, pi: &Policy, values: &[f64]) -> f64 {
    let p = mdp.policy_transition(pi);
    let r = mdp.policy_reward(pi);
    let next = bellman_step(&p, &r, mdp.discount(), values);
    sup_diff(&next, values)
}

/// Value of `pi` with sup-norm Bellman residual at most `tol`.
///
/// Solves `(I - γ P_π) V = r_π` directly and polishes with Bellman sweeps if
/// the factorization leaves a larger residual.
pub fn policy_evaluation(mdp: &TabularMdp, pi: &Policy, tol: f64) -> Result<Vec<f64>> {
    mdp.check_policy(pi)?;
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::invalid("policy evaluation tolerance must be positive"));
    }
    let n = mdp.n_states();
    let gamma = mdp.discount();
    let p = mdp.policy_transition(pi);
    let r = mdp.policy_reward(pi);

    let a = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - gamma * p[i * n + j]
    });
    let mut values = a
        .lu()
        .solve(&DVector::from_column_slice(&r))
        .map(|v| v.as_slice().to_vec())
        .unwrap_or_else(|| vec![0.0; n]);

    for _ in 0..MAX_SWEEPS {
        let next = bellman_step(&p, &r, gamma, &values);
        if sup_diff(&next, &values) <= tol {
            break;
        }
        values = next;
    }
    Ok(values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueIteration {
    pub values: Vec<f64>,
    /// `Q*[s * n_actions + a]`.
    pub q_values: Vec<f64>,
    pub policy: Policy,
    pub sweeps: usize,
}

/// Optimal values by value iteration; the greedy policy breaks ties toward the
/// lowest action index.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<ValueIteration> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::invalid("value iteration tolerance must be positive"));
    }
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let mut values = vec![0.0; n];
    let mut sweeps = 0;
    loop {
        let q = mdp.q_from_values(&values);
        let next: Vec<f64> = q
            .chunks(na)
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        sweeps += 1;
        let residual = sup_diff(&next, &values);
        values = next;
        // Iterate well past `tol` so that tied actions agree to rounding error.
        let scale = 1.0 + values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if residual <= tol.min(1e-12 * scale) || sweeps >= MAX_SWEEPS {
            break;
        }
    }
    let q_values = mdp.q_from_values(&values);
    let policy = greedy_from_q(&q_values, na, GREEDY_TIE_TOLERANCE);
    Ok(ValueIteration {
        values,
        q_values,
        policy,
        sweeps,
    })
}

/// Deterministic greedy policy over a flat Q table. Actions within
/// `tie_tol * (1 + |max|)` of the best count as tied; the lowest index wins.
pub fn greedy_from_q(q: &[f64], n_actions: usize, tie_tol: f64) -> Policy {
    let actions: Vec<usize> = q
        .chunks(n_actions)
        .map(|row| {
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let slack = tie_tol * (1.0 + best.abs());
            row.iter().position(|&x| x >= best - slack).unwrap_or(0)
        })
        .collect();
    Policy::deterministic(&actions, n_actions).expect("actions are in range")
}

/// Stationary distribution of the chain that follows `pi` with probability
/// `1 - damping` and restarts from the initial distribution otherwise.
///
/// With `damping = 0` the Cesàro limit from the initial distribution is
/// returned, computed on the lazy chain `(I + P_π) / 2`, which has the same
/// limit but no periodicity.
pub fn stationary_distribution(
    mdp: &TabularMdp,
    pi: &Policy,
    damping: f64,
) -> Result<DiscreteDistribution> {
    mdp.check_policy(pi)?;
    if !(0.0..=0.1).contains(&damping) {
        return Err(Error::invalid(format!(
            "damping must lie in [0, 0.1], got {damping}"
        )));
    }
    let p = mdp.policy_transition(pi);
    if damping > 0.0 {
        restart_fixed_point(&p, mdp.initial().weights(), 1.0 - damping, "stationary distribution")
    } else {
        lazy_power_iteration(&p, mdp.initial().weights())
    }
}

/// Normalized discounted state occupancy `(1-γ) Σ_t γ^t Pr(s_t = s)`.
pub fn discounted_occupancy(mdp: &TabularMdp, pi: &Policy) -> Result<DiscreteDistribution> {
    mdp.check_policy(pi)?;
    let p = mdp.policy_transition(pi);
    restart_fixed_point(&p, mdp.initial().weights(), mdp.discount(), "discounted occupancy")
}

/// Solves `x = (1 - keep) ι + keep · x P`.
fn restart_fixed_point(
    p: &[f64],
    init: &[f64],
    keep: f64,
    what: &'static str,
) -> Result<DiscreteDistribution> {
    let n = init.len();
    if keep == 0.0 {
        return DiscreteDistribution::new(init.to_vec());
    }
    let restart = 1.0 - keep;
    // Transposed system: (I - keep P^T) x^T = restart ι^T.
    let a = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - keep * p[j * n + i]
    });
    let rhs = DVector::from_iterator(n, init.iter().map(|w| restart * w));
    let mut x = a
        .lu()
        .solve(&rhs)
        .map(|v| v.iter().map(|w| w.max(0.0)).collect::<Vec<f64>>())
        .unwrap_or_else(|| init.to_vec());

    let step = |x: &[f64]| -> Vec<f64> {
        let mut out: Vec<f64> = init.iter().map(|w| restart * w).collect();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, pij) in out.iter_mut().zip(&p[i * n..(i + 1) * n]) {
                *o += keep * xi * pij;
            }
        }
        out
    };
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        let next = step(&x);
        residual = l1_diff(&next, &x);
        if residual <= DISTRIBUTION_TOLERANCE {
            return DiscreteDistribution::new(x);
        }
        x = next;
    }
    Err(Error::ConvergenceFailure {
        what,
        iterations: MAX_SWEEPS,
        residual,
    })
}

fn lazy_power_iteration(p: &[f64], init: &[f64]) -> Result<DiscreteDistribution> {
    let n = init.len();
    let mut x = init.to_vec();
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        let xp = row_times(&x, p, n);
        residual = l1_diff(&xp, &x);
        if residual <= DISTRIBUTION_TOLERANCE {
            return DiscreteDistribution::new(x);
        }
        for (xi, yi) in x.iter_mut().zip(&xp) {
            *xi = 0.5 * (*xi + yi);
        }
    }
    Err(Error::ConvergenceFailure {
        what: "stationary distribution",
        iterations: MAX_SWEEPS,
        residual,
    })
}

pub(crate) fn row_times(x: &[f64], p: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, pij) in out.iter_mut().zip(&p[i * n..(i + 1) * n]) {
            *o += xi * pij;
        }
    }
    out
}

fn bellman_step(p: &[f64], r: &[f64], gamma: f64, values: &[f64]) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|s| {
            let future: f64 = p[s * n..(s + 1) * n]
                .iter()
                .zip(values)
                .map(|(a, b)| a * b)
                .sum();
            r[s] + gamma * future
        })
        .collect()
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}
