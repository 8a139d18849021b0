// Value iteration on a slippery gridworld, then the visitation of the optimal policy.

use otrl::mdp::{
    build_gridworld, discounted_occupancy, stationary_distribution, value_iteration, Action,
    GridworldSpec,
};

const MAP: &str = "\
S..#
.H..
...G";

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = GridworldSpec::parse(MAP)?;
    spec.slip_prob = 0.1;
    spec.hazard_reward = -5.0;
    let world = build_gridworld(&spec)?;

    let vi = value_iteration(&world.mdp, 1e-10)?;
    println!("V*(start) = {:.4} after {} sweeps", vi.values[world.start], vi.sweeps);

    let actions = vi.policy.as_deterministic().expect("greedy policy");
    let stationary = stationary_distribution(&world.mdp, &vi.policy, 1e-3)?;
    let occupancy = discounted_occupancy(&world.mdp, &vi.policy)?;
    println!("state  cell    action  stationary  occupancy");
    for (s, &(r, c)) in world.coords.iter().enumerate() {
        println!(
            "{s:>5}  ({r},{c})  {:>6}  {:>10.5}  {:>9.5}",
            Action::ALL[actions[s]].to_string(),
            stationary.weight(s),
            occupancy.weight(s)
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
