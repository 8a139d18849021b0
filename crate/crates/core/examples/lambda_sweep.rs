// Exhaustive λ sweep: the optimal policy's transport distance falls as λ grows.

use otrl::mdp::{build_gridworld, GridworldSpec};
use otrl::risk::{
    lambda_sweep, PenaltyScaling, RiskAwareConfig, RiskProblem, SweepMethod, SweepSettings,
    VisitationMode,
};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = GridworldSpec::parse("S.H\n..G")?;
    spec.hazard_reward = -0.5;
    let world = build_gridworld(&spec)?;
    let problem = RiskProblem::from_gridworld(&world);
    let settings = SweepSettings {
        lambdas: vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
        method: SweepMethod::Brute,
        visitation: VisitationMode::Occupancy,
        scaling: PenaltyScaling::Plain,
        ball_delta: None,
    };
    let records = lambda_sweep(&problem, &settings, &RiskAwareConfig::default())?;
    println!("lambda  E[G]      D_OT     objective  hazard   ball");
    for r in &records {
        println!(
            "{:>6}  {:>8.4}  {:>7.4}  {:>9.4}  {:>6.4}  {:>6.4}",
            r.lambda, r.expected_return, r.ot_distance, r.objective, r.hazard_mass, r.ball_mass
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
