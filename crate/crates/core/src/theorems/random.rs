use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{StateEmbedding, TabularMdp};
use crate::ot::DiscreteDistribution;
use crate::risk::RiskProblem;

pub const MAX_RANDOM_STATES: usize = 6;
pub const MAX_RANDOM_ACTIONS: usize = 3;

/// Everything needed to rebuild a generated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomMdpSpec {
    pub seed: u64,
    pub n_states: usize,
    pub n_actions: usize,
    pub reward_range: (f64, f64),
    pub discount: f64,
}

impl RandomMdpSpec {
    /// Sizes drawn from the seed: 2 to 5 states, 2 or 3 actions, γ = 0.9, rewards in (−1, 1).
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
        Self {
            seed,
            n_states: rng.random_range(2..=5),
            n_actions: rng.random_range(2..=3),
            reward_range: (-1.0, 1.0),
            discount: 0.9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub spec: RandomMdpSpec,
    pub embedding: StateEmbedding,
    pub problem: RiskProblem,
}

fn dirichlet_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // Normalized Exp(1) draws are Dirichlet(1, ..., 1).
    let mut row: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = row.iter().sum();
    for x in &mut row {
        *x /= total;
    }
    row
}

/// Random MDP with Dirichlet(1) transition rows, uniform rewards, a uniform
/// initial distribution, a random 1-D embedding and a Dirichlet(1) risk distribution.
pub fn random_mdp(spec: &RandomMdpSpec) -> Result<RandomInstance> {
    let RandomMdpSpec {
        seed,
        n_states,
        n_actions,
        reward_range: (lo, hi),
        discount,
    } = *spec;
    if n_states == 0 || n_states > MAX_RANDOM_STATES {
        return Err(Error::invalid(format!(
            "random MDPs have 1 to {MAX_RANDOM_STATES} states, got {n_states}"
        )));
    }
    if n_actions == 0 || n_actions > MAX_RANDOM_ACTIONS {
        return Err(Error::invalid(format!(
            "random MDPs have 1 to {MAX_RANDOM_ACTIONS} actions, got {n_actions}"
        )));
    }
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(Error::invalid(format!("empty reward range ({lo}, {hi})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(dirichlet_row(&mut rng, n_states));
    }
    let reward = (0..n_states * n_actions)
        .map(|_| rng.random_range(lo..hi))
        .collect();
    let points = (0..n_states).map(|_| vec![rng.random::<f64>()]).collect();
    let risk = DiscreteDistribution::new(dirichlet_row(&mut rng, n_states))?;

    let embedding = StateEmbedding::new(points)?;
    let mdp = TabularMdp::new(
        n_states,
        n_actions,
        transition,
        reward,
        discount,
        DiscreteDistribution::uniform(n_states)?,
    )?;
    let problem = RiskProblem::new(mdp, risk, embedding.cost_matrix())?;
    Ok(RandomInstance {
        spec: spec.clone(),
        embedding,
        problem,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> RandomMdpSpec {
        RandomMdpSpec {
            seed,
            n_states: 4,
            n_actions: 3,
            reward_range: (-1.0, 1.0),
            discount: 0.9,
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = random_mdp(&spec(5)).unwrap();
        let b = random_mdp(&spec(5)).unwrap();
        assert_eq!(a.problem.mdp, b.problem.mdp);
        assert_eq!(a.problem.risk, b.problem.risk);
        let c = random_mdp(&spec(6)).unwrap();
        assert_ne!(a.problem.mdp, c.problem.mdp);
    }

    #[test]
    fn rows_are_distributions() {
        let inst = random_mdp(&spec(1)).unwrap();
        let mdp = &inst.problem.mdp;
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                let row = mdp.transition_row(s, a);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&p| p >= 0.0));
                assert!(mdp.reward(s, a).abs() < 1.0);
            }
        }
    }

    #[test]
    fn size_guards() {
        assert!(random_mdp(&RandomMdpSpec { n_states: 7, ..spec(0) }).is_err());
        assert!(random_mdp(&RandomMdpSpec { n_actions: 4, ..spec(0) }).is_err());
        assert!(random_mdp(&RandomMdpSpec { reward_range: (1.0, 1.0), ..spec(0) }).is_err());
    }

    #[test]
    fn seeded_sizes_in_range() {
        for seed in 0..200 {
            let s = RandomMdpSpec::from_seed(seed);
            assert!((2..=5).contains(&s.n_states));
            assert!((2..=3).contains(&s.n_actions));
        }
    }
}
