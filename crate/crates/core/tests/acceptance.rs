//! Runs the ten acceptance criteria and prints one line per criterion.
//! Built without the libtest harness so the lines are never captured.

use obsgain::par::Execution;
use obsgain::selftest;
use std::process::ExitCode;

fn main() -> ExitCode {
    let outcomes = selftest::run_all(Execution::Sequential);
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed: Vec<u8> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    println!("acceptance: {}/{} passed", outcomes.len() - failed.len(), outcomes.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("failing criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
