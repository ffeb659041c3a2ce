//! Runs the full acceptance suite and prints one PASS/FAIL line per criterion.
//!
//! Two criteria cannot be met at their fixed parameters and are listed in
//! `EXPECTED_FAILURES`; they still print FAIL. The target fails on any other
//! failure, and also when an expected failure starts passing so the list
//! stays honest.

use std::process::ExitCode;

const EXPECTED_FAILURES: &[(usize, &str)] = &[
    (3, "at α = 0.5 the 256×256 grid saturates by T = 5, leaving one usable horizon"),
    (9, "with β = 0.3 and α = 0.6 the complement bound first holds at n = 22 > n_max = 12"),
];

fn main() -> ExitCode {
    let work = tempfile::tempdir().expect("temporary directory");
    println!("running acceptance suite in {}", work.path().display());
    let results = estent_cli::acceptance::run_suite(work.path(), 0, |r| println!("{}", r.line()));
    let expected = |id: usize| EXPECTED_FAILURES.iter().find(|(e, _)| *e == id).map(|(_, why)| *why);

    let mut unexpected = Vec::new();
    let mut known = 0;
    for r in &results {
        match (r.passed(), expected(r.id)) {
            (true, None) => {}
            (false, Some(why)) => {
                known += 1;
                println!("known shortfall [{:>2}]: {why}", r.id);
            }
            (false, None) => unexpected.push(format!("criterion {} failed", r.id)),
            (true, Some(_)) => unexpected.push(format!("criterion {} now passes; update EXPECTED_FAILURES", r.id)),
        }
    }
    let passed = results.iter().filter(|r| r.passed()).count();
    println!("acceptance: {passed} PASS, {} FAIL ({known} known)", results.len() - passed);
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        for u in &unexpected {
            println!("unexpected: {u}");
        }
        ExitCode::FAILURE
    }
}
