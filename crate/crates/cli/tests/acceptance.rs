//! Runs the ten acceptance criteria and prints one PASS/FAIL line for each.
//! Exits nonzero when any criterion fails.

use mfglab::acceptance::{format_line, run_suite};

fn main() {
    let results = run_suite(&mut |r| println!("{}", format_line(r)));
    let failed = results.iter().filter(|r| !r.pass).count();
    println!("acceptance: {} passed, {} failed", results.len() - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
