use super::{Policy, TabularMdp};
use crate::error::{Error, Result};

/// Largest number of deterministic policies brute force will enumerate.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// Every deterministic policy, in lexicographic order of the per-state action
/// vector (state 0 most significant). The first policy is all-action-0.
#[derive(Debug, Clone)]
pub struct DeterministicPolicies {
    n_actions: usize,
    next: Option<Vec<usize>>,
    total: usize,
}

impl DeterministicPolicies {
    pub fn total(&self) -> usize {
        self.total
    }
}

impl Iterator for DeterministicPolicies {
    type Item = Policy;

    fn next(&mut self) -> Option<Policy> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        // Odometer increment from the least significant (last) state.
        let mut carry = true;
        for a in succ.iter_mut().rev() {
            *a += 1;
            if *a < self.n_actions {
                carry = false;
                break;
            }
            *a = 0;
        }
        if !carry {
            self.next = Some(succ);
        }
        Some(Policy::deterministic(&current, self.n_actions).expect("actions are in range"))
    }
}

pub fn enumerate_deterministic_policies(mdp: &TabularMdp) -> Result<DeterministicPolicies> {
    let count = (mdp.n_actions() as u128)
        .checked_pow(mdp.n_states() as u32)
        .unwrap_or(u128::MAX);
    if count > ENUMERATION_LIMIT {
        return Err(Error::TooLarge {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(DeterministicPolicies {
        n_actions: mdp.n_actions(),
        next: Some(vec![0; mdp.n_states()]),
        total: count as usize,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::ot::DiscreteDistribution;

    fn mdp(n_states: usize, n_actions: usize) -> TabularMdp {
        let mut transition = vec![0.0; n_states * n_actions * n_states];
        for row in transition.chunks_mut(n_states) {
            row[0] = 1.0;
        }
        TabularMdp::new(
            n_states,
            n_actions,
            transition,
            vec![0.0; n_states * n_actions],
            0.5,
            DiscreteDistribution::uniform(n_states).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn counts_and_order() {
        assert_eq!(enumerate_deterministic_policies(&mdp(2, 2)).unwrap().count(), 4);
        let all: Vec<Vec<usize>> = enumerate_deterministic_policies(&mdp(3, 2))
            .unwrap()
            .map(|p| p.as_deterministic().unwrap())
            .collect();
        assert_eq!(all.len(), 8);
        assert_eq!(all[0], vec![0, 0, 0]);
        assert_eq!(all[1], vec![0, 0, 1]);
        assert_eq!(all[7], vec![1, 1, 1]);
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, all);
    }

    #[test]
    fn duplicate_free() {
        for (s, a) in [(1, 3), (3, 3), (4, 2), (5, 3)] {
            let it = enumerate_deterministic_policies(&mdp(s, a)).unwrap();
            let total = it.total();
            let seen: HashSet<Vec<usize>> = it.map(|p| p.as_deterministic().unwrap()).collect();
            assert_eq!(seen.len(), total);
            assert_eq!(total, a.pow(s as u32));
        }
    }

    #[test]
    fn guard_rejects_large_models() {
        let err = enumerate_deterministic_policies(&mdp(10, 4)).unwrap_err();
        assert!(matches!(err, Error::TooLarge { .. }));
        assert!(enumerate_deterministic_policies(&mdp(9, 4)).is_ok());
    }
}
