// Runs the theorem checks on a handful of random MDPs and prints the summary.

use otrl::theorems::{check_witness, run_suite, summarize, SuiteOptions, Verdict};
use otrl::risk::VisitationMode;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let options = SuiteOptions {
        instances: 20,
        seed: 1,
        ..SuiteOptions::default()
    };
    let reports = run_suite(&options)?;
    for row in summarize(&reports) {
        println!(
            "theorem {} ({:<10}) holds {:>3}  violated {:>3}  vacuous {:>3}",
            row.theorem, row.visitation, row.holds, row.violated, row.vacuous
        );
    }

    let witness = check_witness(VisitationMode::default())?;
    println!("absorbing witness: {}", witness.verdict);

    if let Some(r) = reports.iter().find(|r| r.verdict == Verdict::Violated) {
        println!("first counterexample replays as {}", r.replay()?.verdict);
        println!("{}", serde_json::to_string_pretty(&r.witness)?);
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
