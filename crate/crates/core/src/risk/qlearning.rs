use std::collections::VecDeque;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PenaltyMode, PenaltyScaling, RiskProblem, VisitationMode};
use crate::error::{Error, Result};
use crate::mdp::{Policy, TabularMdp};
use crate::ot::{pointwise_risk_cost, CostMatrix, DiscreteDistribution, OtSolverKind};

/// Mass added to every state of an empirical visitation estimate before normalizing.
const EMPIRICAL_SMOOTHING: f64 = 1e-6;
/// Allowed mismatch between `Σ p̂·C` and the shifted dual objective.
const DUAL_CHECK_TOLERANCE: f64 = 1e-6;

/// Source of the visitation estimate `p̂` used for the risk penalty during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistributionMode {
    /// Damped stationary distribution of the current greedy policy.
    Stationary,
    /// Discounted occupancy of the current greedy policy.
    Occupancy,
    /// Smoothed state frequencies over the most recent `recompute_interval` steps.
    #[default]
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskAwareConfig {
    pub lambda: f64,
    pub alpha0: f64,
    pub alpha_decay: f64,
    pub epsilon0: f64,
    pub epsilon_decay: f64,
    pub episodes: usize,
    pub max_steps_per_episode: usize,
    pub penalty_mode: PenaltyMode,
    /// Steps between penalty recomputations.
    pub recompute_interval: usize,
    pub distribution_mode: DistributionMode,
    pub penalty_scaling: PenaltyScaling,
    /// Restart probability for the stationary distribution mode.
    pub damping: f64,
    /// Solver for the global penalty. The dual penalty always uses the exact solver.
    pub ot_solver: OtSolverKind,
    pub seed: u64,
}

impl Default for RiskAwareConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            alpha0: 0.5,
            alpha_decay: 0.01,
            epsilon0: 1.0,
            epsilon_decay: 0.01,
            episodes: 1000,
            max_steps_per_episode: 200,
            penalty_mode: PenaltyMode::Global,
            recompute_interval: 100,
            distribution_mode: DistributionMode::Empirical,
            penalty_scaling: PenaltyScaling::Plain,
            damping: VisitationMode::DEFAULT_DAMPING,
            ot_solver: OtSolverKind::Exact,
            seed: 0,
        }
    }
}

impl RiskAwareConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidInput(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be finite and nonnegative, got {}", self.lambda));
        }
        if !(self.alpha0 > 0.0 && self.alpha0 <= 1.0) {
            return fail(format!("alpha0 must lie in (0, 1], got {}", self.alpha0));
        }
        if !(0.0..=1.0).contains(&self.epsilon0) {
            return fail(format!("epsilon0 must lie in [0, 1], got {}", self.epsilon0));
        }
        if !(self.alpha_decay >= 0.0 && self.alpha_decay.is_finite())
            || !(self.epsilon_decay >= 0.0 && self.epsilon_decay.is_finite())
        {
            return fail("decay rates must be finite and nonnegative".into());
        }
        if self.episodes == 0 || self.max_steps_per_episode == 0 || self.recompute_interval == 0 {
            return fail("episodes, max_steps_per_episode and recompute_interval must be positive".into());
        }
        if !(0.0..=0.1).contains(&self.damping) {
            return fail(format!("damping must lie in [0, 0.1], got {}", self.damping));
        }
        Ok(())
    }

    pub fn alpha(&self, episode: usize) -> f64 {
        self.alpha0 / (1.0 + self.alpha_decay * episode as f64)
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        self.epsilon0 / (1.0 + self.epsilon_decay * episode as f64)
    }
}

/// Action values, row-major by state.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    /// Row-major values `Q[s * n_actions + a]`.
    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if n_actions == 0 || values.len() != n_states * n_actions {
            return Err(Error::invalid(format!(
                "expected {} Q-values for {n_states} states and {n_actions} actions, got {}",
                n_states * n_actions,
                values.len()
            )));
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Lowest-index action with the largest value.
    pub fn best_action(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for (a, &q) in row.iter().enumerate() {
            if q > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn max_value(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        assert_eq!(other.len(), self.values.len());
        self.values
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "state,action,value")?;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                writeln!(w, "{s},{a},{}", self.get(s, a))?;
            }
        }
        Ok(())
    }
}

pub fn greedy_policy(q: &QTable) -> Policy {
    let actions: Vec<usize> = (0..q.n_states).map(|s| q.best_action(s)).collect();
    Policy::deterministic(&actions, q.n_actions).expect("greedy actions are in range")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Discounted return from the episode's first state.
    pub raw_return: f64,
    /// Discounted return with the per-step penalty `λ·C(s)` subtracted.
    pub penalized_return: f64,
    /// OT distance of the current visitation estimate at episode end.
    pub ot_cost: f64,
    pub hazard_visits: usize,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VisitationSnapshot {
    pub step: usize,
    pub episode: usize,
    pub distribution: Vec<f64>,
    pub ot_cost: f64,
    /// Constant removed from the dual potentials so the smallest is zero.
    pub dual_shift: Option<f64>,
    /// `|Σ p̂·C − (cost − shift)|` for the dual penalty.
    pub decomposition_residual: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainingLog {
    pub episodes: Vec<EpisodeRecord>,
    pub snapshots: Vec<VisitationSnapshot>,
}

impl TrainingLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "episode,raw_return,penalized_return,ot_cost,hazard_visits,epsilon")?;
        for r in &self.episodes {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.episode, r.raw_return, r.penalized_return, r.ot_cost, r.hazard_visits, r.epsilon
            )?;
        }
        Ok(())
    }
}

/// Tabular Q-learning on the expected reward `R(s, a)`, with no risk term.
pub fn q_learning(mdp: &TabularMdp, config: &RiskAwareConfig) -> Result<QTable> {
    config.validate()?;
    Ok(train(mdp, &[], config, None)?.0)
}

/// Q-learning whose target subtracts `λ·C(s)`, with `C` refreshed every
/// `recompute_interval` steps from the current visitation estimate.
pub fn risk_aware_q_learning(
    problem: &RiskProblem,
    config: &RiskAwareConfig,
) -> Result<(QTable, TrainingLog)> {
    config.validate()?;
    let tracker = PenaltyTracker::new(problem, config);
    train(&problem.mdp, &problem.hazards, config, Some(tracker))
}

struct PenaltyTracker<'a> {
    risk: &'a DiscreteDistribution,
    cost: &'a CostMatrix,
    lambda: f64,
    mode: PenaltyMode,
    distribution: DistributionMode,
    damping: f64,
    solver: OtSolverKind,
    /// Current `C(s)`.
    per_state: Vec<f64>,
    ot_cost: f64,
    window: VecDeque<usize>,
    interval: usize,
}

impl<'a> PenaltyTracker<'a> {
    fn new(problem: &'a RiskProblem, config: &RiskAwareConfig) -> Self {
        let solver = match config.penalty_mode {
            PenaltyMode::Dual => OtSolverKind::Exact,
            _ => config.ot_solver,
        };
        Self {
            risk: &problem.risk,
            cost: &problem.cost,
            lambda: config.lambda,
            mode: config.penalty_mode,
            distribution: config.distribution_mode,
            damping: config.damping,
            solver,
            per_state: vec![0.0; problem.mdp.n_states()],
            ot_cost: 0.0,
            window: VecDeque::with_capacity(config.recompute_interval),
            interval: config.recompute_interval,
        }
    }

    fn observe(&mut self, s: usize) {
        if self.window.len() == self.interval {
            self.window.pop_front();
        }
        self.window.push_back(s);
    }

    fn estimate(&self, mdp: &TabularMdp, q: &QTable) -> Result<DiscreteDistribution> {
        match self.distribution {
            DistributionMode::Stationary => VisitationMode::Stationary {
                damping: self.damping,
            }
            .distribution(mdp, &greedy_policy(q)),
            DistributionMode::Occupancy => {
                VisitationMode::Occupancy.distribution(mdp, &greedy_policy(q))
            }
            DistributionMode::Empirical => {
                let n = mdp.n_states();
                let mut w = vec![EMPIRICAL_SMOOTHING; n];
                if self.window.is_empty() {
                    for (wi, p) in w.iter_mut().zip(mdp.initial().weights()) {
                        *wi += p;
                    }
                } else {
                    let unit = 1.0 / self.window.len() as f64;
                    for &s in &self.window {
                        w[s] += unit;
                    }
                }
                DiscreteDistribution::new(w)
            }
        }
    }

    fn recompute(
        &mut self,
        mdp: &TabularMdp,
        q: &QTable,
        step: usize,
        episode: usize,
    ) -> Result<VisitationSnapshot> {
        let p_hat = self.estimate(mdp, q)?;
        let mut dual_shift = None;
        let mut decomposition_residual = None;
        match self.mode {
            PenaltyMode::Pointwise => {
                self.ot_cost = self.solver.solve(&p_hat, self.risk, self.cost)?.cost;
                if step == 0 {
                    for (s, c) in self.per_state.iter_mut().enumerate() {
                        *c = pointwise_risk_cost(s, self.risk, self.cost);
                    }
                }
            }
            PenaltyMode::Global => {
                self.ot_cost = self.solver.solve(&p_hat, self.risk, self.cost)?.cost;
                self.per_state.fill(self.ot_cost);
            }
            PenaltyMode::Dual => {
                let sol = self.solver.solve(&p_hat, self.risk, self.cost)?;
                self.ot_cost = sol.cost;
                // Fold the target potential into the source side so Σ p̂·u' equals the cost.
                let target_part: f64 = self
                    .risk
                    .weights()
                    .iter()
                    .zip(&sol.dual_target)
                    .map(|(p, v)| p * v)
                    .sum();
                let shifted: Vec<f64> = sol.dual_source.iter().map(|u| u + target_part).collect();
                let shift = shifted.iter().copied().fold(f64::INFINITY, f64::min);
                for (c, u) in self.per_state.iter_mut().zip(&shifted) {
                    *c = u - shift;
                }
                let lhs: f64 = p_hat
                    .weights()
                    .iter()
                    .zip(&self.per_state)
                    .map(|(p, c)| p * c)
                    .sum();
                let residual = (lhs - (sol.cost - shift)).abs();
                if residual > DUAL_CHECK_TOLERANCE * (1.0 + sol.cost.abs()) {
                    return Err(Error::Numerical(format!(
                        "dual penalty decomposition is off by {residual:e} at step {step}"
                    )));
                }
                dual_shift = Some(shift);
                decomposition_residual = Some(residual);
            }
        }
        Ok(VisitationSnapshot {
            step,
            episode,
            distribution: p_hat.weights().to_vec(),
            ot_cost: self.ot_cost,
            dual_shift,
            decomposition_residual,
        })
    }

    fn penalty(&self, s: usize) -> f64 {
        self.lambda * self.per_state[s]
    }
}

/// Inverse-CDF draw; falls back to the last state with positive weight.
fn sample(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

fn train(
    mdp: &TabularMdp,
    hazards: &[usize],
    config: &RiskAwareConfig,
    mut tracker: Option<PenaltyTracker<'_>>,
) -> Result<(QTable, TrainingLog)> {
    let n_actions = mdp.n_actions();
    let gamma = mdp.discount();
    let mut is_hazard = vec![false; mdp.n_states()];
    for &h in hazards {
        is_hazard[h] = true;
    }
    let terminal: Vec<bool> = (0..mdp.n_states()).map(|s| mdp.is_absorbing(s)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut q = QTable::zeros(mdp.n_states(), n_actions);
    let mut log = TrainingLog::default();
    let mut step = 0usize;

    if let Some(t) = tracker.as_mut() {
        log.snapshots.push(t.recompute(mdp, &q, 0, 0)?);
    }

    for episode in 0..config.episodes {
        let eps = config.epsilon(episode);
        let alpha = config.alpha(episode);
        let mut s = sample(mdp.initial().weights(), rng.random::<f64>());
        let mut raw_return = 0.0;
        let mut penalized_return = 0.0;
        let mut discount = 1.0;
        let mut hazard_visits = 0;

        for _ in 0..config.max_steps_per_episode {
            if terminal[s] {
                break;
            }
            let a = if rng.random::<f64>() < eps {
                rng.random_range(0..n_actions)
            } else {
                q.best_action(s)
            };
            let next = sample(mdp.transition_row(s, a), rng.random::<f64>());
            let r = mdp.reward(s, a);
            let bootstrap = if terminal[next] { 0.0 } else { q.max_value(next) };
            let target = match tracker.as_ref() {
                Some(t) => {
                    let c = t.penalty(s);
                    penalized_return += discount * (r - c);
                    r - c + gamma * bootstrap
                }
                None => {
                    penalized_return += discount * r;
                    r + gamma * bootstrap
                }
            };
            raw_return += discount * r;
            discount *= gamma;

            let idx = s * n_actions + a;
            q.values[idx] += alpha * (target - q.values[idx]);
            if !q.values[idx].is_finite() {
                return Err(Error::Numerical(format!(
                    "Q({s}, {a}) became non-finite in episode {episode}"
                )));
            }

            if is_hazard[next] {
                hazard_visits += 1;
            }
            step += 1;
            if let Some(t) = tracker.as_mut() {
                t.observe(next);
                if step.is_multiple_of(t.interval) {
                    let snap = t.recompute(mdp, &q, step, episode).map_err(|e| {
                        log::error!("penalty recomputation failed at step {step}: {e}");
                        e
                    })?;
                    log.snapshots.push(snap);
                }
            }
            s = next;
        }

        log.episodes.push(EpisodeRecord {
            episode,
            raw_return,
            penalized_return,
            ot_cost: tracker.as_ref().map_or(0.0, |t| t.ot_cost),
            hazard_visits,
            epsilon: eps,
        });
    }
    Ok((q, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_gridworld, value_iteration, GridworldSpec};

    fn corridor() -> RiskProblem {
        let world = build_gridworld(&GridworldSpec::parse("S..G").unwrap()).unwrap();
        RiskProblem::from_gridworld(&world)
    }

    #[test]
    fn config_validation() {
        assert!(RiskAwareConfig::default().validate().is_ok());
        for bad in [
            RiskAwareConfig { lambda: -1.0, ..Default::default() },
            RiskAwareConfig { alpha0: 0.0, ..Default::default() },
            RiskAwareConfig { epsilon0: 1.5, ..Default::default() },
            RiskAwareConfig { episodes: 0, ..Default::default() },
            RiskAwareConfig { damping: 0.5, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn config_deserializes_with_defaults() {
        let cfg: RiskAwareConfig =
            serde_json::from_str(r#"{"lambda": 0.5, "penalty_mode": "dual"}"#).unwrap();
        assert_eq!(cfg.lambda, 0.5);
        assert_eq!(cfg.penalty_mode, PenaltyMode::Dual);
        assert_eq!(cfg.episodes, RiskAwareConfig::default().episodes);
        assert!(serde_json::from_str::<RiskAwareConfig>(r#"{"lamda": 1}"#).is_err());
    }

    #[test]
    fn schedules_decay() {
        let cfg = RiskAwareConfig::default();
        assert_eq!(cfg.epsilon(0), 1.0);
        assert!((cfg.epsilon(100) - 0.5).abs() < 1e-15);
        assert!((cfg.alpha(100) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn greedy_breaks_ties_low() {
        let mut q = QTable::zeros(2, 3);
        q.values = vec![1.0, 1.0, 0.0, -1.0, 2.0, 2.0];
        assert_eq!(greedy_policy(&q).as_deterministic().unwrap(), vec![0, 1]);
    }

    #[test]
    fn sample_inverse_cdf() {
        assert_eq!(sample(&[0.0, 1.0], 0.0), 1);
        assert_eq!(sample(&[0.5, 0.5], 0.49), 0);
        assert_eq!(sample(&[0.5, 0.5], 0.5), 1);
        assert_eq!(sample(&[0.3, 0.7, 0.0], 1.0), 1);
    }

    #[test]
    fn same_seed_same_table() {
        let p = corridor();
        let cfg = RiskAwareConfig { episodes: 50, seed: 7, ..Default::default() };
        let (a, la) = risk_aware_q_learning(&p, &cfg).unwrap();
        let (b, lb) = risk_aware_q_learning(&p, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        let (c, _) = risk_aware_q_learning(&p, &RiskAwareConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_lambda_reproduces_vanilla_bitwise() {
        let p = corridor();
        for mode in [PenaltyMode::Global, PenaltyMode::Dual, PenaltyMode::Pointwise] {
            let cfg = RiskAwareConfig {
                lambda: 0.0,
                episodes: 200,
                penalty_mode: mode,
                seed: 3,
                ..Default::default()
            };
            let (risk, _) = risk_aware_q_learning(&p, &cfg).unwrap();
            let vanilla = q_learning(&p.mdp, &cfg).unwrap();
            assert_eq!(risk.values(), vanilla.values());
        }
    }

    #[test]
    fn vanilla_converges_on_corridor() {
        let p = corridor();
        let cfg = RiskAwareConfig { episodes: 2000, seed: 1, ..Default::default() };
        let q = q_learning(&p.mdp, &cfg).unwrap();
        let vi = value_iteration(&p.mdp, 1e-12).unwrap();
        assert!(q.max_abs_diff(&vi.q_values) < 0.05, "{:?}", q.values());
        assert_eq!(greedy_policy(&q), vi.policy);
    }

    #[test]
    fn dual_snapshots_decompose() {
        let p = corridor();
        let cfg = RiskAwareConfig {
            lambda: 0.5,
            episodes: 100,
            penalty_mode: PenaltyMode::Dual,
            recompute_interval: 10,
            seed: 11,
            ..Default::default()
        };
        let (_, log) = risk_aware_q_learning(&p, &cfg).unwrap();
        assert!(log.snapshots.len() > 5);
        for snap in &log.snapshots {
            assert!(snap.decomposition_residual.unwrap() <= 1e-9);
            let min = snap.distribution.iter().sum::<f64>();
            assert!((min - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn model_based_estimates_run() {
        let p = corridor();
        for distribution_mode in [DistributionMode::Stationary, DistributionMode::Occupancy] {
            let cfg = RiskAwareConfig {
                episodes: 30,
                distribution_mode,
                recompute_interval: 5,
                ..Default::default()
            };
            let (q, log) = risk_aware_q_learning(&p, &cfg).unwrap();
            assert_eq!(log.episodes.len(), 30);
            assert!(q.values().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn csv_headers() {
        let mut buf = Vec::new();
        QTable::zeros(1, 2).write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "state,action,value\n0,0,0\n0,1,0\n");
        let mut buf = Vec::new();
        TrainingLog::default().write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("episode,raw_return"));
    }
}
