//! Finite Markov decision processes.

mod enumerate;
mod gridworld;
mod solve;

use crate::error::{Error, Result};
use crate::ot::DiscreteDistribution;

pub use crate::ot::StateEmbedding;
pub use enumerate::{enumerate_deterministic_policies, DeterministicPolicies, ENUMERATION_LIMIT};
pub use gridworld::{build_gridworld, Action, Cell, Gridworld, GridworldSpec};
pub use solve::{
    bellman_residual, discounted_occupancy, greedy_from_q, policy_evaluation,
    stationary_distribution, value_iteration, ValueIteration, DISTRIBUTION_TOLERANCE,
};

const ROW_TOLERANCE: f64 = 1e-9;

/// Finite MDP with dense transition tensor `P[s][a][s']` and expected rewards `R[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    discount: f64,
    initial: DiscreteDistribution,
}

impl TabularMdp {
    /// `transition` is indexed `[(s * n_actions + a) * n_states + s']`,
    /// `reward` is indexed `[s * n_actions + a]`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
        initial: DiscreteDistribution,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("an MDP needs at least one state and one action"));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::invalid(format!(
                "transition tensor has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(Error::invalid(format!(
                "reward table has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            )));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::invalid(format!(
                "discount must lie in [0, 1), got {discount}"
            )));
        }
        if initial.len() != n_states {
            return Err(Error::invalid("initial distribution has the wrong length"));
        }
        if let Some(k) = reward.iter().position(|r| !r.is_finite()) {
            return Err(Error::invalid(format!(
                "reward for state {} action {} is not finite",
                k / n_actions,
                k % n_actions
            )));
        }
        for (row_idx, row) in transition.chunks(n_states).enumerate() {
            let (s, a) = (row_idx / n_actions, row_idx % n_actions);
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::invalid(format!(
                    "transition row for state {s} action {a} has a negative or non-finite entry"
                )));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::invalid(format!(
                    "transition row for state {s} action {a} sums to {total}"
                )));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            discount,
            initial,
        })
    }

    /// Builds from nested `P[s][a][s']` and `R[s][a]`.
    pub fn from_nested(
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        discount: f64,
        initial: DiscreteDistribution,
    ) -> Result<Self> {
        let n_states = transition.len();
        let n_actions = transition.first().map_or(0, Vec::len);
        if transition.iter().any(|rows| rows.len() != n_actions)
            || reward.iter().any(|r| r.len() != n_actions)
        {
            return Err(Error::invalid("ragged transition or reward table"));
        }
        let flat_t = transition.into_iter().flatten().flatten().collect();
        let flat_r = reward.into_iter().flatten().collect();
        Self::new(n_states, n_actions, flat_t, flat_r, discount, initial)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial(&self) -> &DiscreteDistribution {
        &self.initial
    }

    pub fn with_discount(mut self, discount: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::invalid(format!(
                "discount must lie in [0, 1), got {discount}"
            )));
        }
        self.discount = discount;
        Ok(self)
    }

    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    #[inline]
    pub fn probability(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition_row(s, a)[next]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// A state every action keeps in place with zero reward.
    pub fn is_absorbing(&self, s: usize) -> bool {
        (0..self.n_actions).all(|a| self.probability(s, a, s) == 1.0 && self.reward(s, a) == 0.0)
    }

    /// Row-major `n × n` state-to-state matrix of the chain induced by `pi`.
    pub fn policy_transition(&self, pi: &Policy) -> Vec<f64> {
        let n = self.n_states;
        let mut out = vec![0.0; n * n];
        for s in 0..n {
            for (a, &w) in pi.action_probs(s).iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (o, p) in out[s * n..(s + 1) * n].iter_mut().zip(self.transition_row(s, a)) {
                    *o += w * p;
                }
            }
        }
        out
    }

    pub fn policy_reward(&self, pi: &Policy) -> Vec<f64> {
        (0..self.n_states)
            .map(|s| {
                pi.action_probs(s)
                    .iter()
                    .enumerate()
                    .map(|(a, w)| w * self.reward(s, a))
                    .sum()
            })
            .collect()
    }

    /// `Q(s, a) = R(s, a) + γ Σ P(s'|s,a) V(s')`, flattened like the reward table.
    pub fn q_from_values(&self, values: &[f64]) -> Vec<f64> {
        let mut q = Vec::with_capacity(self.n_states * self.n_actions);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let future: f64 = self
                    .transition_row(s, a)
                    .iter()
                    .zip(values)
                    .map(|(p, v)| p * v)
                    .sum();
                q.push(self.reward(s, a) + self.discount * future);
            }
        }
        q
    }

    pub(crate) fn check_policy(&self, pi: &Policy) -> Result<()> {
        if pi.n_states() != self.n_states || pi.n_actions() != self.n_actions {
            return Err(Error::invalid(format!(
                "policy is {}x{}, MDP is {}x{}",
                pi.n_states(),
                pi.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }
}

/// Stochastic policy `π[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("policy must be nonempty"));
        }
        for (s, row) in rows.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::invalid(format!("policy row {s} has the wrong length")));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::invalid(format!("policy row {s} has a negative entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::invalid(format!("policy row {s} sums to {total}")));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            probs: rows.into_iter().flatten().collect(),
        })
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        if actions.is_empty() || n_actions == 0 {
            return Err(Error::invalid("policy must be nonempty"));
        }
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::invalid(format!(
                    "action {a} for state {s} out of range for {n_actions} actions"
                )));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Self {
            n_states: actions.len(),
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn action_probs(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// The chosen action per state, if every row is a point mass.
    pub fn as_deterministic(&self) -> Option<Vec<usize>> {
        (0..self.n_states)
            .map(|s| {
                let row = self.action_probs(s);
                row.iter().position(|&p| p == 1.0)
            })
            .collect()
    }
}
