//! Risk-aware control with an optimal-transport penalty.
//!
//! A policy's risk is the OT distance between the state distribution it
//! induces and a target risk distribution over states. The penalized
//! objective is `J(π, λ) = E_π[G] − λ·κ·D_OT(P_π, p_r)`, where `κ` is 1 for
//! [`PenaltyScaling::Plain`] and `1/(1−γ)` for [`PenaltyScaling::Discounted`]
//! (the penalty paid at every step inside the discounted sum).
//!
//! Ground truth on small models comes from [`PolicyCatalog`], which scores
//! every deterministic policy once so that any number of λ values can be
//! maximized over without re-solving.

mod qlearning;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    discounted_occupancy, enumerate_deterministic_policies, policy_evaluation,
    stationary_distribution, Gridworld, Policy, TabularMdp,
};
use crate::ot::{ot_distance, pointwise_risk_cost, CostMatrix, DiscreteDistribution};

pub use qlearning::{
    greedy_policy, q_learning, risk_aware_q_learning, DistributionMode, EpisodeRecord, QTable,
    RiskAwareConfig, TrainingLog, VisitationSnapshot,
};

const EVALUATION_TOLERANCE: f64 = 1e-10;

/// How the per-state penalty `C(s)` in the learning update is defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyMode {
    /// The current scalar `D_OT(p̂, p_r)`, identical for every state.
    #[default]
    Global,
    /// The source dual potential of the current OT solve at `s`, shifted to be nonnegative.
    Dual,
    /// `D_OT(δ_s, p_r)`, the cost of moving a point mass at `s` onto the target.
    Pointwise,
}

impl FromStr for PenaltyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Self::Global),
            "dual" => Ok(Self::Dual),
            "pointwise" => Ok(Self::Pointwise),
            other => Err(Error::invalid(format!(
                "unknown penalty mode {other:?} (expected global, dual or pointwise)"
            ))),
        }
    }
}

impl fmt::Display for PenaltyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Global => "global",
            Self::Dual => "dual",
            Self::Pointwise => "pointwise",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyScaling {
    #[default]
    Plain,
    Discounted,
}

impl PenaltyScaling {
    pub const BOTH: [PenaltyScaling; 2] = [PenaltyScaling::Plain, PenaltyScaling::Discounted];

    pub fn factor(self, discount: f64) -> f64 {
        match self {
            Self::Plain => 1.0,
            Self::Discounted => 1.0 / (1.0 - discount),
        }
    }
}

impl fmt::Display for PenaltyScaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Plain => "plain",
            Self::Discounted => "discounted",
        })
    }
}

/// Which state distribution stands in for `P_π` when a policy is analysed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum VisitationMode {
    Stationary { damping: f64 },
    Occupancy,
}

impl VisitationMode {
    pub const DEFAULT_DAMPING: f64 = 1e-3;

    pub fn distribution(&self, mdp: &TabularMdp, pi: &Policy) -> Result<DiscreteDistribution> {
        match *self {
            Self::Stationary { damping } => stationary_distribution(mdp, pi, damping),
            Self::Occupancy => discounted_occupancy(mdp, pi),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Stationary { .. } => "stationary",
            Self::Occupancy => "occupancy",
        }
    }
}

impl Default for VisitationMode {
    fn default() -> Self {
        Self::Stationary {
            damping: Self::DEFAULT_DAMPING,
        }
    }
}

/// An MDP together with its risk geometry.
#[derive(Debug, Clone)]
pub struct RiskProblem {
    pub mdp: TabularMdp,
    pub risk: DiscreteDistribution,
    pub cost: CostMatrix,
    /// States whose visitation mass is reported as hazard exposure.
    pub hazards: Vec<usize>,
}

impl RiskProblem {
    pub fn new(mdp: TabularMdp, risk: DiscreteDistribution, cost: CostMatrix) -> Result<Self> {
        let n = mdp.n_states();
        if risk.len() != n || cost.n() != n {
            return Err(Error::invalid(format!(
                "MDP has {n} states but risk distribution has {} and cost matrix {}",
                risk.len(),
                cost.n()
            )));
        }
        Ok(Self {
            mdp,
            risk,
            cost,
            hazards: Vec::new(),
        })
    }

    pub fn with_hazards(mut self, hazards: Vec<usize>) -> Result<Self> {
        if let Some(&h) = hazards.iter().find(|&&h| h >= self.mdp.n_states()) {
            return Err(Error::invalid(format!("hazard state {h} out of range")));
        }
        self.hazards = hazards;
        Ok(self)
    }

    /// Uses the gridworld's default risk distribution and squared grid distances.
    pub fn from_gridworld(world: &Gridworld) -> Self {
        Self {
            mdp: world.mdp.clone(),
            risk: world.risk.clone(),
            cost: world.cost_matrix(),
            hazards: world.hazards.clone(),
        }
    }

    pub fn hazard_mass(&self, visitation: &DiscreteDistribution) -> f64 {
        self.hazards.iter().map(|&h| visitation.weight(h)).sum()
    }
}

/// `E_π[G]` from the initial distribution.
pub fn expected_return(mdp: &TabularMdp, pi: &Policy) -> Result<f64> {
    let values = policy_evaluation(mdp, pi, EVALUATION_TOLERANCE)?;
    Ok(mdp
        .initial()
        .weights()
        .iter()
        .zip(&values)
        .map(|(w, v)| w * v)
        .sum())
}

pub fn penalized_objective(
    mdp: &TabularMdp,
    pi: &Policy,
    risk: &DiscreteDistribution,
    cost: &CostMatrix,
    lambda: f64,
    scaling: PenaltyScaling,
    mode: VisitationMode,
) -> Result<f64> {
    check_lambda(lambda)?;
    let ret = expected_return(mdp, pi)?;
    if lambda == 0.0 {
        return Ok(ret);
    }
    let visitation = mode.distribution(mdp, pi)?;
    let distance = ot_distance(&visitation, risk, cost)?;
    Ok(ret - lambda * scaling.factor(mdp.discount()) * distance)
}

/// Return, risk and visitation of one policy.
#[derive(Debug, Clone)]
pub struct PolicyScore {
    pub policy: Policy,
    pub expected_return: f64,
    pub ot_distance: f64,
    pub visitation: DiscreteDistribution,
}

impl PolicyScore {
    pub fn objective(&self, lambda: f64, scaling: PenaltyScaling, discount: f64) -> f64 {
        if lambda == 0.0 {
            return self.expected_return;
        }
        self.expected_return - lambda * scaling.factor(discount) * self.ot_distance
    }
}

pub fn score_policy(problem: &RiskProblem, pi: &Policy, mode: VisitationMode) -> Result<PolicyScore> {
    let expected_return = expected_return(&problem.mdp, pi)?;
    let visitation = mode.distribution(&problem.mdp, pi)?;
    let ot_distance = ot_distance(&visitation, &problem.risk, &problem.cost)?;
    Ok(PolicyScore {
        policy: pi.clone(),
        expected_return,
        ot_distance,
        visitation,
    })
}

/// Every deterministic policy of a small MDP, scored once, in enumeration order.
#[derive(Debug, Clone)]
pub struct PolicyCatalog {
    scores: Vec<PolicyScore>,
    discount: f64,
}

impl PolicyCatalog {
    pub fn enumerate(problem: &RiskProblem, mode: VisitationMode) -> Result<Self> {
        let policies: Vec<Policy> = enumerate_deterministic_policies(&problem.mdp)?.collect();
        let scores = policies
            .par_iter()
            .map(|pi| score_policy(problem, pi, mode))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scores,
            discount: problem.mdp.discount(),
        })
    }

    pub fn scores(&self) -> &[PolicyScore] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn objective(&self, index: usize, lambda: f64, scaling: PenaltyScaling) -> f64 {
        self.scores[index].objective(lambda, scaling, self.discount)
    }

    /// Index of the first policy (in enumeration order) maximizing the objective.
    pub fn best_index(&self, lambda: f64, scaling: PenaltyScaling) -> usize {
        let mut best = 0;
        let mut best_value = f64::NEG_INFINITY;
        for i in 0..self.scores.len() {
            let v = self.objective(i, lambda, scaling);
            if v > best_value {
                best = i;
                best_value = v;
            }
        }
        best
    }

    pub fn best(&self, lambda: f64, scaling: PenaltyScaling) -> (&PolicyScore, f64) {
        let i = self.best_index(lambda, scaling);
        (&self.scores[i], self.objective(i, lambda, scaling))
    }

    /// Index of the first policy minimizing the OT distance to the risk distribution.
    pub fn min_distance_index(&self) -> usize {
        let mut best = 0;
        for (i, s) in self.scores.iter().enumerate() {
            if s.ot_distance < self.scores[best].ot_distance {
                best = i;
            }
        }
        best
    }
}

/// Exhaustive maximizer of the penalized objective over deterministic policies.
pub fn brute_force_optimal(
    problem: &RiskProblem,
    lambda: f64,
    scaling: PenaltyScaling,
    mode: VisitationMode,
) -> Result<(Policy, f64)> {
    check_lambda(lambda)?;
    let catalog = PolicyCatalog::enumerate(problem, mode)?;
    let (score, value) = catalog.best(lambda, scaling);
    Ok((score.policy.clone(), value))
}

/// States whose point mass lies within OT distance `delta` of the risk distribution.
pub fn ball_states(risk: &DiscreteDistribution, cost: &CostMatrix, delta: f64) -> Vec<usize> {
    (0..risk.len())
        .filter(|&s| pointwise_risk_cost(s, risk, cost) <= delta)
        .collect()
}

/// Lower median of the per-state point-mass costs; the default ball radius.
pub fn default_ball_delta(risk: &DiscreteDistribution, cost: &CostMatrix) -> f64 {
    let mut costs: Vec<f64> = (0..risk.len())
        .map(|s| pointwise_risk_cost(s, risk, cost))
        .collect();
    costs.sort_by(f64::total_cmp);
    costs[(costs.len() - 1) / 2]
}

/// Visitation mass the policy places on `states`.
pub fn expected_visits(
    mdp: &TabularMdp,
    pi: &Policy,
    states: &[usize],
    mode: VisitationMode,
) -> Result<f64> {
    if let Some(&s) = states.iter().find(|&&s| s >= mdp.n_states()) {
        return Err(Error::invalid(format!("state {s} out of range")));
    }
    let visitation = mode.distribution(mdp, pi)?;
    Ok(states.iter().map(|&s| visitation.weight(s)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMethod {
    #[default]
    Brute,
    #[serde(rename = "qlearning")]
    QLearning,
}

#[derive(Debug, Clone)]
pub struct SweepSettings {
    /// Ascending risk-sensitivity values.
    pub lambdas: Vec<f64>,
    pub method: SweepMethod,
    pub visitation: VisitationMode,
    pub scaling: PenaltyScaling,
    /// Radius for the `ball_mass` column; defaults to [`default_ball_delta`].
    pub ball_delta: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepRecord {
    pub lambda: f64,
    pub policy: Policy,
    pub expected_return: f64,
    pub ot_distance: f64,
    pub objective: f64,
    pub hazard_mass: f64,
    pub ball_mass: f64,
}

/// One record per λ. `Brute` records are exact optima; `QLearning` records
/// describe the greedy policy learned with `config` at that λ.
pub fn lambda_sweep(
    problem: &RiskProblem,
    settings: &SweepSettings,
    config: &RiskAwareConfig,
) -> Result<Vec<SweepRecord>> {
    if settings.lambdas.is_empty() {
        return Err(Error::invalid("lambda list is empty"));
    }
    for &l in &settings.lambdas {
        check_lambda(l)?;
    }
    if settings.lambdas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("lambda list must be sorted ascending"));
    }
    let delta = settings
        .ball_delta
        .unwrap_or_else(|| default_ball_delta(&problem.risk, &problem.cost));
    let ball = ball_states(&problem.risk, &problem.cost, delta);
    let discount = problem.mdp.discount();

    let scores: Vec<PolicyScore> = match settings.method {
        SweepMethod::Brute => {
            let catalog = PolicyCatalog::enumerate(problem, settings.visitation)?;
            settings
                .lambdas
                .iter()
                .map(|&l| catalog.best(l, settings.scaling).0.clone())
                .collect()
        }
        SweepMethod::QLearning => settings
            .lambdas
            .par_iter()
            .map(|&lambda| {
                let cfg = RiskAwareConfig {
                    lambda,
                    ..config.clone()
                };
                let (q, _) = risk_aware_q_learning(problem, &cfg)?;
                score_policy(problem, &greedy_policy(&q), settings.visitation)
            })
            .collect::<Result<Vec<_>>>()?,
    };

    Ok(settings
        .lambdas
        .iter()
        .zip(scores)
        .map(|(&lambda, score)| SweepRecord {
            lambda,
            objective: score.objective(lambda, settings.scaling, discount),
            hazard_mass: problem.hazard_mass(&score.visitation),
            ball_mass: ball.iter().map(|&s| score.visitation.weight(s)).sum(),
            expected_return: score.expected_return,
            ot_distance: score.ot_distance,
            policy: score.policy,
        })
        .collect())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!(
            "risk sensitivity must be finite and nonnegative, got {lambda}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_gridworld, value_iteration, GridworldSpec};
    use crate::ot::build_cost_matrix;

    /// State 0 (start) can stay (reward 1) or move to state 1 (reward 0),
    /// which is absorbing-ish with reward 0.5 per step. The risk target sits on state 1.
    fn two_state_problem() -> RiskProblem {
        let mdp = TabularMdp::from_nested(
            vec![
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            ],
            vec![vec![1.0, 0.0], vec![0.5, 0.5]],
            0.5,
            DiscreteDistribution::dirac(2, 0).unwrap(),
        )
        .unwrap();
        let cost = build_cost_matrix(vec![vec![0.0], vec![1.0]]).unwrap();
        RiskProblem::new(mdp, DiscreteDistribution::dirac(2, 1).unwrap(), cost).unwrap()
    }

    #[test]
    fn zero_lambda_is_plain_return() {
        let p = two_state_problem();
        let pi = Policy::deterministic(&[0, 0], 2).unwrap();
        let j = penalized_objective(
            &p.mdp,
            &pi,
            &p.risk,
            &p.cost,
            0.0,
            PenaltyScaling::Plain,
            VisitationMode::default(),
        )
        .unwrap();
        assert_eq!(j, expected_return(&p.mdp, &pi).unwrap());
        assert!((j - 2.0).abs() < 1e-9);
    }

    #[test]
    fn two_state_objectives_by_hand() {
        // Occupancy with γ = 0.5 from state 0:
        //   stay:  P_π = (1, 0), D = 1, E[G] = 1/(1-0.5) = 2
        //   move:  P_π = (0.5, 0.5), D = 0.5, E[G] = 0 + 0.5 * 0.5/(1-0.5) = 0.5
        let p = two_state_problem();
        let mode = VisitationMode::Occupancy;
        let stay = Policy::deterministic(&[0, 0], 2).unwrap();
        let go = Policy::deterministic(&[1, 0], 2).unwrap();
        let obj = |pi: &Policy, l: f64, s: PenaltyScaling| {
            penalized_objective(&p.mdp, pi, &p.risk, &p.cost, l, s, mode).unwrap()
        };
        assert!((obj(&stay, 1.0, PenaltyScaling::Plain) - 1.0).abs() < 1e-9);
        assert!((obj(&go, 1.0, PenaltyScaling::Plain) - 0.0).abs() < 1e-9);
        assert!((obj(&stay, 1.0, PenaltyScaling::Discounted) - 0.0).abs() < 1e-9);
        assert!((obj(&go, 1.0, PenaltyScaling::Discounted) - (-0.5)).abs() < 1e-9);
        // λ = 4: stay 2 - 4 = -2, go 0.5 - 2 = -1.5, so moving wins.
        let (best, value) = brute_force_optimal(&p, 4.0, PenaltyScaling::Plain, mode).unwrap();
        assert_eq!(best.as_deterministic().unwrap()[0], 1);
        assert!((value + 1.5).abs() < 1e-9);
        let (best, value) = brute_force_optimal(&p, 0.0, PenaltyScaling::Plain, mode).unwrap();
        assert_eq!(best.as_deterministic().unwrap(), vec![0, 0]);
        assert!((value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn target_reachable_exactly_costs_nothing() {
        let p = two_state_problem();
        let mode = VisitationMode::Stationary { damping: 0.0 };
        let go = Policy::deterministic(&[1, 0], 2).unwrap();
        let j = penalized_objective(&p.mdp, &go, &p.risk, &p.cost, 3.0, PenaltyScaling::Plain, mode)
            .unwrap();
        assert!((j - expected_return(&p.mdp, &go).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn brute_force_at_zero_lambda_matches_value_iteration() {
        let world = build_gridworld(&GridworldSpec::parse("S.H\n..G").unwrap()).unwrap();
        let problem = RiskProblem::from_gridworld(&world);
        let (_, value) =
            brute_force_optimal(&problem, 0.0, PenaltyScaling::Plain, VisitationMode::default()).unwrap();
        let vi = value_iteration(&problem.mdp, 1e-12).unwrap();
        assert!((value - vi.values[world.start]).abs() < 1e-6);
    }

    #[test]
    fn ball_examples() {
        let c = build_cost_matrix((0..5).map(|i| vec![i as f64]).collect()).unwrap();
        let dirac = DiscreteDistribution::dirac(5, 2).unwrap();
        assert_eq!(ball_states(&dirac, &c, 0.0), vec![2]);
        assert_eq!(ball_states(&dirac, &c, 4.0), vec![0, 1, 2, 3, 4]);
        // Uniform target on a line: costs 6, 3, 2, 3, 6.
        let uniform = DiscreteDistribution::uniform(5).unwrap();
        assert_eq!(ball_states(&uniform, &c, 2.5), vec![2]);
        assert_eq!(ball_states(&uniform, &c, 3.5), vec![1, 2, 3]);
        assert!((default_ball_delta(&uniform, &c) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn expected_visits_examples() {
        let p = two_state_problem();
        let mode = VisitationMode::Stationary { damping: 0.0 };
        let go = Policy::deterministic(&[1, 1], 2).unwrap();
        assert!((expected_visits(&p.mdp, &go, &[0, 1], mode).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(expected_visits(&p.mdp, &go, &[], mode).unwrap(), 0.0);
        assert!((expected_visits(&p.mdp, &go, &[1], mode).unwrap() - 1.0).abs() < 1e-9);
        assert!(expected_visits(&p.mdp, &go, &[2], mode).is_err());
    }

    #[test]
    fn sweep_validates_lambdas() {
        let p = two_state_problem();
        let mut settings = SweepSettings {
            lambdas: vec![],
            method: SweepMethod::Brute,
            visitation: VisitationMode::default(),
            scaling: PenaltyScaling::Plain,
            ball_delta: None,
        };
        let cfg = RiskAwareConfig::default();
        assert!(lambda_sweep(&p, &settings, &cfg).is_err());
        settings.lambdas = vec![1.0, 0.5];
        assert!(lambda_sweep(&p, &settings, &cfg).is_err());
        settings.lambdas = vec![-1.0];
        assert!(lambda_sweep(&p, &settings, &cfg).is_err());
        settings.lambdas = vec![0.0, 0.0, 2.0, 2.0];
        let recs = lambda_sweep(&p, &settings, &cfg).unwrap();
        assert_eq!(recs.len(), 4);
        assert_eq!(recs[0].policy, recs[1].policy);
        assert_eq!(recs[2].ot_distance, recs[3].ot_distance);
        assert!(recs[2].ot_distance <= recs[0].ot_distance);
    }

    #[test]
    fn penalty_mode_parsing() {
        assert_eq!("dual".parse::<PenaltyMode>().unwrap(), PenaltyMode::Dual);
        assert!("other".parse::<PenaltyMode>().is_err());
        assert_eq!(PenaltyMode::Pointwise.to_string(), "pointwise");
    }
}
