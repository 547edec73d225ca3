//! Full reproduction suite. Prints one pass/fail line per criterion and exits
//! nonzero if any criterion fails. Runs without the libtest harness so the
//! lines are never captured.

use std::process::ExitCode;

use scot_core::verify;

fn main() -> ExitCode {
    println!("\nrunning {} acceptance criteria", verify::CRITERIA.len());
    let outcomes = verify::run_all(false);
    for o in &outcomes {
        println!("{}", verify::outcome_line(o));
    }
    let failed: Vec<u8> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    println!("acceptance: {}/{} criteria passed\n", outcomes.len() - failed.len(), outcomes.len());
    if failed.is_empty() && outcomes.len() == verify::CRITERIA.len() {
        ExitCode::SUCCESS
    } else {
        eprintln!("failing criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
