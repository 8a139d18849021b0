// Exact and entropic transport between two histograms on a line.

use otrl::ot::{
    build_cost_matrix, solve_exact, solve_regularized, DiscreteDistribution, RegularizedOptions,
};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let points: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
    let cost = build_cost_matrix(points)?;
    let mu = DiscreteDistribution::new(vec![4.0, 3.0, 2.0, 1.0, 0.0])?;
    let nu = DiscreteDistribution::new(vec![0.0, 1.0, 2.0, 3.0, 4.0])?;

    let exact = solve_exact(&mu, &nu, &cost)?;
    println!("exact cost      {:.6} ({} pivots)", exact.cost, exact.iterations);
    println!("duality gap     {:.3e}", exact.relative_duality_gap(&mu, &nu));
    for i in 0..cost.n() {
        let row: Vec<String> = (0..cost.n()).map(|j| format!("{:.3}", exact.plan.get(i, j))).collect();
        println!("  {}", row.join(" "));
    }

    for scale in [1e-1, 1e-2, 1e-3] {
        let opts = RegularizedOptions {
            epsilon: scale * cost.max(),
            max_iter: 200_000,
            tol: 1e-8,
        };
        let reg = solve_regularized(&mu, &nu, &cost, &opts)?;
        println!(
            "epsilon {:>6.0e}·max  cost {:.6}  excess {:.2}%",
            scale,
            reg.cost,
            100.0 * (reg.cost - exact.cost) / exact.cost
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
