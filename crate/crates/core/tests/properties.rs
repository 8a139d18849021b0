use proptest::prelude::*;

use otrl::mdp::{
    bellman_residual, policy_evaluation, stationary_distribution, Policy, TabularMdp,
};
use otrl::ot::{
    build_cost_matrix, ot_distance, pointwise_risk_cost, solve_exact, solve_regularized,
    CostMatrix, DiscreteDistribution, RegularizedOptions,
};
use otrl::risk::{greedy_policy, PenaltyScaling, PolicyCatalog, QTable, VisitationMode};
use otrl::theorems::{random_mdp, RandomMdpSpec};

fn weights(n: usize) -> impl Strategy<Value = DiscreteDistribution> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 4 => 0.01f64..1.0], n)
        .prop_filter("some mass", |w| w.iter().any(|&x| x > 0.0))
        .prop_map(|w| DiscreteDistribution::new(w).unwrap())
}

fn cost(n: usize) -> impl Strategy<Value = CostMatrix> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), n)
        .prop_map(|pts| build_cost_matrix(pts).unwrap())
}

fn instance() -> impl Strategy<Value = (DiscreteDistribution, DiscreteDistribution, CostMatrix)> {
    (2usize..10).prop_flat_map(|n| (weights(n), weights(n), cost(n)))
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn exact_solution_is_certified((mu, nu, c) in instance()) {
        let sol = solve_exact(&mu, &nu, &c).unwrap();
        let (r, k) = sol.plan.marginal_residuals(&mu, &nu);
        prop_assert!(r <= 1e-12 && k <= 1e-12);
        prop_assert!(sol.plan.entries().iter().all(|&p| p >= 0.0));
        prop_assert!(sol.relative_duality_gap(&mu, &nu) <= 1e-9);
        prop_assert!(sol.dual_infeasibility(&c) <= 1e-9);
        prop_assert!(sol.cost >= -1e-12);
    }

    #[test]
    fn cost_is_permutation_invariant(
        (mu, nu, c, perm) in instance().prop_flat_map(|(mu, nu, c)| {
            let n = mu.len();
            (Just(mu), Just(nu), Just(c), permutation(n))
        })
    ) {
        let a = ot_distance(&mu, &nu, &c).unwrap();
        let b = ot_distance(&mu.permuted(&perm), &nu.permuted(&perm), &c.permuted(&perm)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
    }

    #[test]
    fn swapping_arguments_transposes((mu, nu, c) in instance()) {
        let a = ot_distance(&mu, &nu, &c).unwrap();
        let b = ot_distance(&nu, &mu, &c.transposed()).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
    }

    #[test]
    fn pointwise_cost_is_dirac_transport((_, nu, c) in instance(), pick in any::<prop::sample::Index>()) {
        let s = pick.index(nu.len());
        let dirac = DiscreteDistribution::dirac(nu.len(), s).unwrap();
        let direct = pointwise_risk_cost(s, &nu, &c);
        let solved = ot_distance(&dirac, &nu, &c).unwrap();
        prop_assert!((direct - solved).abs() <= 1e-12 * (1.0 + direct));
    }

    #[test]
    fn regularized_plan_is_feasible_and_dominated((mu, nu, c) in instance()) {
        let opts = RegularizedOptions { epsilon: 0.05 * c.max().max(1e-3), max_iter: 100_000, tol: 1e-8 };
        let reg = solve_regularized(&mu, &nu, &c, &opts).unwrap();
        let exact = ot_distance(&mu, &nu, &c).unwrap();
        prop_assert!(reg.plan.l1_marginal_residual(&mu, &nu) <= 1e-12);
        prop_assert!(reg.cost >= exact - 1e-12);
    }
}

fn mdp_spec() -> impl Strategy<Value = RandomMdpSpec> {
    (any::<u64>(), 1usize..=6, 1usize..=3, 0.0f64..0.99).prop_map(|(seed, n_states, n_actions, discount)| {
        RandomMdpSpec { seed, n_states, n_actions, reward_range: (-1.0, 1.0), discount }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evaluation_solves_bellman(spec in mdp_spec()) {
        let mdp: TabularMdp = random_mdp(&spec).unwrap().problem.mdp;
        let pi = Policy::uniform(mdp.n_states(), mdp.n_actions());
        let v = policy_evaluation(&mdp, &pi, 1e-10).unwrap();
        prop_assert!(bellman_residual(&mdp, &pi, &v) <= 1e-9);
    }

    #[test]
    fn stationary_is_a_fixed_point(spec in mdp_spec(), damping in 0.0f64..0.1) {
        let mdp = random_mdp(&spec).unwrap().problem.mdp;
        let pi = Policy::uniform(mdp.n_states(), mdp.n_actions());
        let d = stationary_distribution(&mdp, &pi, damping).unwrap();
        let p = mdp.policy_transition(&pi);
        let n = mdp.n_states();
        let init = mdp.initial().weights();
        let mut worst: f64 = 0.0;
        for j in 0..n {
            let flow: f64 = (0..n).map(|i| d.weight(i) * p[i * n + j]).sum();
            worst = worst.max((damping * init[j] + (1.0 - damping) * flow - d.weight(j)).abs());
        }
        prop_assert!(worst <= 1e-8, "residual {worst}");
    }

    #[test]
    fn penalty_never_raises_the_optimum(seed in any::<u64>(), lambda in 0.0f64..50.0) {
        let problem = random_mdp(&RandomMdpSpec { seed, ..RandomMdpSpec::from_seed(seed) }).unwrap().problem;
        let catalog = PolicyCatalog::enumerate(&problem, VisitationMode::Occupancy).unwrap();
        let v0 = catalog.best(0.0, PenaltyScaling::Plain).1;
        for scaling in PenaltyScaling::BOTH {
            prop_assert!(catalog.best(lambda, scaling).1 <= v0 + 1e-9);
        }
    }

    #[test]
    fn greedy_ignores_per_state_shifts(
        values in prop::collection::vec(-10.0f64..10.0, 12),
        shifts in prop::collection::vec(-5.0f64..5.0, 4),
    ) {
        // Adding a per-state constant (as a per-state penalty does to a
        // converged table) leaves the greedy policy unchanged.
        let q = QTable::from_values(4, 3, values.clone()).unwrap();
        let shifted: Vec<f64> = values.iter().enumerate().map(|(i, v)| v + shifts[i / 3]).collect();
        let q2 = QTable::from_values(4, 3, shifted).unwrap();
        prop_assert_eq!(greedy_policy(&q), greedy_policy(&q2));
    }
}
