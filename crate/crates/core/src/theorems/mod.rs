//! Exhaustive checks of the penalized objective's structural claims on small MDPs.
//!
//! Each check enumerates every deterministic policy, so the optimum at any λ
//! is exact. Reports are plain data and serialize one per line; a report
//! carries its instance descriptor and parameters, so [`TheoremReport::replay`]
//! rebuilds the instance and reproduces the verdict.

mod random;

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::ot::{build_cost_matrix, pointwise_risk_cost, solve_exact, DiscreteDistribution};
use crate::risk::{ball_states, PenaltyScaling, PolicyCatalog, RiskProblem, VisitationMode};

pub use random::{random_mdp, RandomInstance, RandomMdpSpec, MAX_RANDOM_ACTIONS, MAX_RANDOM_STATES};

/// Slack allowed in every numerical comparison.
pub const CHECK_TOLERANCE: f64 = 1e-9;
pub const THEOREM2_LAMBDAS: [f64; 3] = [0.1, 1.0, 10.0];
pub const THEOREM3_GRID: [f64; 9] = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Holds,
    Violated,
    Vacuous,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Holds => "holds",
            Self::Violated => "violated",
            Self::Vacuous => "vacuous",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum InstanceDescriptor {
    Random(RandomMdpSpec),
    /// The three-state instance with an absorbing target state.
    Witness,
    /// A caller-supplied problem; reports on it cannot be replayed from the descriptor alone.
    Custom { label: String },
}

impl InstanceDescriptor {
    pub fn build(&self) -> Result<RiskProblem> {
        match self {
            Self::Random(spec) => Ok(random_mdp(spec)?.problem),
            Self::Witness => absorbing_witness(),
            Self::Custom { label } => Err(Error::invalid(format!(
                "instance {label:?} was supplied by the caller and cannot be rebuilt"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub theorem: u8,
    pub instance: InstanceDescriptor,
    pub n_states: usize,
    pub n_actions: usize,
    pub visitation: VisitationMode,
    pub claim: String,
    /// λ values for theorems 2 and 3, ball radii for theorem 4.
    pub parameters: Vec<f64>,
    pub verdict: Verdict,
    pub checks: usize,
    pub details: Value,
    /// Present exactly when the verdict is `violated`.
    pub witness: Option<Value>,
}

impl TheoremReport {
    /// Rebuilds the instance and reruns the same check.
    pub fn replay(&self) -> Result<TheoremReport> {
        let problem = self.instance.build()?;
        let lab = TheoremLab::new(&problem, self.instance.clone(), self.visitation)?;
        lab.check(self.theorem, &self.parameters)
    }

    /// Whether a violation of this report fails the suite. Theorem 4 is only
    /// hard-asserted on the constructed witness.
    pub fn is_hard(&self) -> bool {
        self.theorem != 4 || self.instance == InstanceDescriptor::Witness
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("reports serialize")
    }
}

/// Scores every deterministic policy of one instance once and answers all four checks from that.
pub struct TheoremLab<'a> {
    problem: &'a RiskProblem,
    descriptor: InstanceDescriptor,
    mode: VisitationMode,
    catalog: PolicyCatalog,
}

fn actions(catalog: &PolicyCatalog, i: usize) -> Vec<usize> {
    catalog.scores()[i]
        .policy
        .as_deterministic()
        .expect("catalog policies are deterministic")
}

impl<'a> TheoremLab<'a> {
    pub fn new(
        problem: &'a RiskProblem,
        descriptor: InstanceDescriptor,
        mode: VisitationMode,
    ) -> Result<Self> {
        let catalog = PolicyCatalog::enumerate(problem, mode)?;
        Ok(Self {
            problem,
            descriptor,
            mode,
            catalog,
        })
    }

    pub fn catalog(&self) -> &PolicyCatalog {
        &self.catalog
    }

    /// Runs theorem `id` with its parameter list; an empty list selects the defaults.
    pub fn check(&self, id: u8, parameters: &[f64]) -> Result<TheoremReport> {
        match id {
            1 => self.theorem1(),
            2 if parameters.is_empty() => self.theorem2(&THEOREM2_LAMBDAS),
            2 => self.theorem2(parameters),
            3 if parameters.is_empty() => self.theorem3(&THEOREM3_GRID),
            3 => self.theorem3(parameters),
            4 if parameters.is_empty() => self.theorem4(&default_deltas(self.problem)),
            4 => self.theorem4(parameters),
            other => Err(Error::invalid(format!("unknown theorem id {other} (expected 1 to 4)"))),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn report(
        &self,
        theorem: u8,
        claim: &str,
        parameters: &[f64],
        verdict: Verdict,
        checks: usize,
        details: Value,
        witness: Option<Value>,
    ) -> TheoremReport {
        TheoremReport {
            theorem,
            instance: self.descriptor.clone(),
            n_states: self.problem.mdp.n_states(),
            n_actions: self.problem.mdp.n_actions(),
            visitation: self.mode,
            claim: claim.to_string(),
            parameters: parameters.to_vec(),
            verdict,
            checks,
            details,
            witness,
        }
    }

    /// No deterministic policy is strictly closer to `p_r` than the argmin,
    /// and the argmin's distance is reproduced by the transposed problem.
    pub fn theorem1(&self) -> Result<TheoremReport> {
        let cat = &self.catalog;
        let best = cat.min_distance_index();
        let d_min = cat.scores()[best].ot_distance;
        let mut witness = None;
        for (i, s) in cat.scores().iter().enumerate() {
            if s.ot_distance < d_min - CHECK_TOLERANCE {
                witness = Some(json!({
                    "argmin_policy": actions(cat, best),
                    "argmin_distance": d_min,
                    "closer_policy": actions(cat, i),
                    "closer_distance": s.ot_distance,
                }));
                break;
            }
        }
        let visitation = &cat.scores()[best].visitation;
        let swapped = solve_exact(&self.problem.risk, visitation, &self.problem.cost.transposed())?.cost;
        if witness.is_none() && (swapped - d_min).abs() > CHECK_TOLERANCE {
            witness = Some(json!({
                "argmin_policy": actions(cat, best),
                "argmin_distance": d_min,
                "swapped_distance": swapped,
            }));
        }
        let ties = cat
            .scores()
            .iter()
            .filter(|s| (s.ot_distance - d_min).abs() <= CHECK_TOLERANCE)
            .count();
        let verdict = if witness.is_some() { Verdict::Violated } else { Verdict::Holds };
        Ok(self.report(
            1,
            "for all deterministic pi: D_OT(P_pi, p_r) >= D_OT(P_pi_min, p_r) - 1e-9",
            &[],
            verdict,
            cat.len() + 1,
            json!({
                "policies": cat.len(),
                "argmin_policy": actions(cat, best),
                "argmin_distance": d_min,
                "minimizers": ties,
            }),
            witness,
        ))
    }

    /// `V*_λ ≤ V*_0 + 1e-9` for every λ and both penalty scalings.
    pub fn theorem2(&self, lambdas: &[f64]) -> Result<TheoremReport> {
        check_lambdas(lambdas, false)?;
        let cat = &self.catalog;
        let i0 = cat.best_index(0.0, PenaltyScaling::Plain);
        let v0 = cat.objective(i0, 0.0, PenaltyScaling::Plain);
        let mut rows = Vec::new();
        let mut witness = None;
        for &lambda in lambdas {
            for scaling in PenaltyScaling::BOTH {
                let i = cat.best_index(lambda, scaling);
                let v = cat.objective(i, lambda, scaling);
                rows.push(json!({ "lambda": lambda, "scaling": scaling, "value": v }));
                if v > v0 + CHECK_TOLERANCE && witness.is_none() {
                    witness = Some(json!({
                        "lambda": lambda,
                        "scaling": scaling,
                        "v_lambda": v,
                        "v_zero": v0,
                        "policy_lambda": actions(cat, i),
                        "policy_zero": actions(cat, i0),
                    }));
                }
            }
        }
        let verdict = if witness.is_some() { Verdict::Violated } else { Verdict::Holds };
        Ok(self.report(
            2,
            "for all lambda, scaling: V*_lambda <= V*_0 + 1e-9",
            lambdas,
            verdict,
            rows.len(),
            json!({ "v_zero": v0, "policy_zero": actions(cat, i0), "values": rows }),
            witness,
        ))
    }

    /// `D_OT(P_{π*_λ}, p_r)` is non-increasing along an ascending λ grid.
    pub fn theorem3(&self, grid: &[f64]) -> Result<TheoremReport> {
        check_lambdas(grid, true)?;
        let cat = &self.catalog;
        let optima: Vec<usize> = grid
            .iter()
            .map(|&l| cat.best_index(l, PenaltyScaling::Plain))
            .collect();
        let distances: Vec<f64> = optima.iter().map(|&i| cat.scores()[i].ot_distance).collect();
        let mut witness = None;
        for k in 1..grid.len() {
            if distances[k] > distances[k - 1] + CHECK_TOLERANCE {
                witness = Some(json!({
                    "lambda_low": grid[k - 1],
                    "lambda_high": grid[k],
                    "policy_low": actions(cat, optima[k - 1]),
                    "policy_high": actions(cat, optima[k]),
                    "distance_low": distances[k - 1],
                    "distance_high": distances[k],
                }));
                break;
            }
        }
        let verdict = if witness.is_some() { Verdict::Violated } else { Verdict::Holds };
        Ok(self.report(
            3,
            "D_OT(P_pi*_lambda, p_r) non-increasing in lambda within 1e-9",
            grid,
            verdict,
            grid.len().saturating_sub(1),
            json!({ "distances": distances }),
            witness,
        ))
    }

    /// The distance-minimizing policy puts at least as much visitation mass on
    /// `B_δ(p_r)` as any other policy. Verdict per δ; the report is `violated`
    /// if any δ is, `vacuous` if every δ is.
    pub fn theorem4(&self, deltas: &[f64]) -> Result<TheoremReport> {
        if deltas.is_empty() || deltas.iter().any(|d| !d.is_finite()) {
            return Err(Error::invalid("theorem 4 needs a nonempty list of finite radii"));
        }
        let cat = &self.catalog;
        let n = self.problem.mdp.n_states();
        let i_min = cat.min_distance_index();
        let mut per_delta = Vec::new();
        let mut witness = None;
        let mut checks = 0;
        for &delta in deltas {
            let ball = ball_states(&self.problem.risk, &self.problem.cost, delta);
            if ball.is_empty() || ball.len() == n {
                per_delta.push(json!({ "delta": delta, "ball": ball, "verdict": Verdict::Vacuous }));
                continue;
            }
            checks += 1;
            let mass = |i: usize| -> f64 {
                ball.iter().map(|&s| cat.scores()[i].visitation.weight(s)).sum()
            };
            let m_min = mass(i_min);
            let (i_max, m_max) = (0..cat.len())
                .map(|i| (i, mass(i)))
                .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            let verdict = if m_min >= m_max - CHECK_TOLERANCE {
                Verdict::Holds
            } else {
                if witness.is_none() {
                    witness = Some(json!({
                        "delta": delta,
                        "ball": ball,
                        "argmin_policy": actions(cat, i_min),
                        "argmin_distance": cat.scores()[i_min].ot_distance,
                        "argmin_mass": m_min,
                        "max_mass_policy": actions(cat, i_max),
                        "max_mass_distance": cat.scores()[i_max].ot_distance,
                        "max_mass": m_max,
                    }));
                }
                Verdict::Violated
            };
            per_delta.push(json!({
                "delta": delta,
                "ball": ball,
                "verdict": verdict,
                "argmin_mass": m_min,
                "max_mass": m_max,
            }));
        }
        let verdict = if witness.is_some() {
            Verdict::Violated
        } else if checks == 0 {
            Verdict::Vacuous
        } else {
            Verdict::Holds
        };
        Ok(self.report(
            4,
            "for each delta: mass(pi_min, B_delta) >= max_pi mass(pi, B_delta) - 1e-9",
            deltas,
            verdict,
            checks,
            json!({
                "argmin_policy": actions(cat, i_min),
                "argmin_distance": cat.scores()[i_min].ot_distance,
                "per_delta": per_delta,
            }),
            witness,
        ))
    }
}

fn check_lambdas(lambdas: &[f64], sorted: bool) -> Result<()> {
    if lambdas.is_empty() {
        return Err(Error::invalid("lambda list is empty"));
    }
    if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::invalid("lambda values must be finite and nonnegative"));
    }
    if sorted && lambdas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("lambda grid must be sorted ascending"));
    }
    Ok(())
}

/// Midpoints between consecutive distinct point-mass costs, so every radius
/// gives a ball that is neither empty nor the whole state space.
pub fn default_deltas(problem: &RiskProblem) -> Vec<f64> {
    let mut costs: Vec<f64> = (0..problem.mdp.n_states())
        .map(|s| pointwise_risk_cost(s, &problem.risk, &problem.cost))
        .collect();
    costs.sort_by(f64::total_cmp);
    costs.dedup_by(|a, b| (*a - *b).abs() <= CHECK_TOLERANCE);
    let deltas: Vec<f64> = costs.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    if deltas.is_empty() {
        vec![costs[0]]
    } else {
        deltas
    }
}

/// States 0 and 1 can stay put or move to state 2, which is absorbing; the
/// risk distribution is the point mass on state 2.
pub fn absorbing_witness() -> Result<RiskProblem> {
    let stay_or_go = |s: usize| {
        let mut stay = vec![0.0; 3];
        stay[s] = 1.0;
        vec![stay, vec![0.0, 0.0, 1.0]]
    };
    let mdp = TabularMdp::from_nested(
        vec![stay_or_go(0), stay_or_go(1), vec![vec![0.0, 0.0, 1.0]; 2]],
        vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]],
        0.9,
        DiscreteDistribution::uniform(3)?,
    )?;
    let cost = build_cost_matrix(vec![vec![0.0], vec![1.0], vec![2.0]])?;
    RiskProblem::new(mdp, DiscreteDistribution::dirac(3, 2)?, cost)
}

/// Theorem-4 report for [`absorbing_witness`] at δ = 0.
pub fn check_witness(mode: VisitationMode) -> Result<TheoremReport> {
    let problem = absorbing_witness()?;
    TheoremLab::new(&problem, InstanceDescriptor::Witness, mode)?.theorem4(&[0.0])
}

/// Runs one check on a caller-supplied problem.
pub fn check_custom(
    problem: &RiskProblem,
    label: &str,
    theorem: u8,
    parameters: &[f64],
    mode: VisitationMode,
) -> Result<TheoremReport> {
    let descriptor = InstanceDescriptor::Custom {
        label: label.to_string(),
    };
    TheoremLab::new(problem, descriptor, mode)?.check(theorem, parameters)
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub theorems: Vec<u8>,
    pub instances: usize,
    pub seed: u64,
    pub primary: VisitationMode,
    /// Re-run every check under this visitation mode and report it separately.
    pub secondary: Option<VisitationMode>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            theorems: vec![1, 2, 3, 4],
            instances: 100,
            seed: 0,
            primary: VisitationMode::default(),
            secondary: Some(VisitationMode::Occupancy),
        }
    }
}

/// Runs the requested checks on instances seeded `seed, seed + 1, ...`.
/// Output is ordered by pass, theorem, then instance index; theorem 4 adds
/// the constructed witness after the random instances.
pub fn run_suite(options: &SuiteOptions) -> Result<Vec<TheoremReport>> {
    if let Some(&bad) = options.theorems.iter().find(|&&t| !(1..=4).contains(&t)) {
        return Err(Error::invalid(format!("unknown theorem id {bad} (expected 1 to 4)")));
    }
    let mut theorems = options.theorems.clone();
    theorems.sort_unstable();
    theorems.dedup();

    let specs: Vec<RandomMdpSpec> = (0..options.instances as u64)
        .map(|i| RandomMdpSpec::from_seed(options.seed.wrapping_add(i)))
        .collect();
    let modes = std::iter::once(options.primary).chain(options.secondary);

    let mut out = Vec::new();
    for mode in modes {
        let per_instance = specs
            .par_iter()
            .map(|spec| {
                let problem = random_mdp(spec)?.problem;
                let lab = TheoremLab::new(&problem, InstanceDescriptor::Random(spec.clone()), mode)?;
                theorems.iter().map(|&t| lab.check(t, &[])).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for (k, &t) in theorems.iter().enumerate() {
            out.extend(per_instance.iter().map(|reports| reports[k].clone()));
            if t == 4 {
                out.push(check_witness(mode)?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SummaryRow {
    pub theorem: u8,
    pub visitation: &'static str,
    pub instances: usize,
    pub holds: usize,
    pub violated: usize,
    pub vacuous: usize,
}

pub fn summarize(reports: &[TheoremReport]) -> Vec<SummaryRow> {
    let mut rows: BTreeMap<(usize, u8), SummaryRow> = BTreeMap::new();
    let mut pass_order: Vec<&'static str> = Vec::new();
    for r in reports {
        let label = r.visitation.label();
        let pass = match pass_order.iter().position(|&l| l == label) {
            Some(p) => p,
            None => {
                pass_order.push(label);
                pass_order.len() - 1
            }
        };
        let row = rows.entry((pass, r.theorem)).or_insert(SummaryRow {
            theorem: r.theorem,
            visitation: label,
            instances: 0,
            holds: 0,
            violated: 0,
            vacuous: 0,
        });
        row.instances += 1;
        match r.verdict {
            Verdict::Holds => row.holds += 1,
            Verdict::Violated => row.violated += 1,
            Verdict::Vacuous => row.vacuous += 1,
        }
    }
    rows.into_values().collect()
}

/// Reports whose violation fails the suite.
pub fn hard_failures(reports: &[TheoremReport]) -> Vec<&TheoremReport> {
    reports
        .iter()
        .filter(|r| r.is_hard() && r.verdict == Verdict::Violated)
        .collect()
}
