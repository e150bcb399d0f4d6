//! Acceptance gate: runs every criterion and prints one line each.
//!
//! Uses its own harness so the table is shown without `--nocapture`. Exits
//! non-zero when a gating criterion fails; supplementary lines never gate.

use std::process::ExitCode;

use kplab::acceptance::run_suite;
use kplab::config::Suite;
use kplab::Parallel;

const SEED: u64 = 42;

fn main() -> ExitCode {
    let runner = Parallel::from_env();
    println!("\nacceptance ({} threads, seed {SEED})", runner.threads());
    let outcomes = run_suite(&runner, Suite::All, SEED, |o| println!("{}", o.line()));
    let failed: Vec<_> = outcomes
        .iter()
        .filter(|o| !o.passed && !o.supplementary)
        .map(|o| o.id)
        .collect();
    if failed.is_empty() {
        println!("all criteria passed\n");
        ExitCode::SUCCESS
    } else {
        println!("failed: {}\n", failed.join(", "));
        ExitCode::FAILURE
    }
}
