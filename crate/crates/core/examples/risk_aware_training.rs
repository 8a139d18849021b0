// Q-learning with a pointwise transport penalty on a map with a hazardous shortcut.

use otrl::mdp::{build_gridworld, GridworldSpec};
use otrl::risk::{
    greedy_policy, risk_aware_q_learning, score_policy, PenaltyMode, RiskAwareConfig, RiskProblem,
    VisitationMode,
};

const MAP: &str = "\
HHH
S#G
...";

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = GridworldSpec::parse(MAP)?;
    spec.hazard_reward = -0.99;
    let world = build_gridworld(&spec)?;
    let problem = RiskProblem::from_gridworld(&world);

    for lambda in [0.0, 8.0] {
        let config = RiskAwareConfig {
            lambda,
            episodes: 3000,
            penalty_mode: PenaltyMode::Pointwise,
            seed: 1,
            ..RiskAwareConfig::default()
        };
        let (q, log) = risk_aware_q_learning(&problem, &config)?;
        let policy = greedy_policy(&q);
        let score = score_policy(&problem, &policy, VisitationMode::default())?;
        let hazard_steps: usize = log.episodes.iter().map(|e| e.hazard_visits).sum();
        println!(
            "lambda {lambda:>3}: E[G] {:.4}  D_OT {:.4}  hazard mass {:.5}  hazard steps in training {hazard_steps}",
            score.expected_return,
            score.ot_distance,
            problem.hazard_mass(&score.visitation)
        );
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
