//! Every acceptance criterion at its stated tolerance, one line each.
//!
//! Lines are written straight to stdout so they show up without
//! `--nocapture`.

use std::io::Write;

use coagfrag::acceptance::{self, CRITERIA};

#[test]
fn all_acceptance_criteria() {
    let outcomes = acceptance::run_all();
    assert_eq!(outcomes.len(), CRITERIA.len());
    {
        let mut out = std::io::stdout().lock();
        writeln!(out).unwrap();
        for o in &outcomes {
            writeln!(out, "{o}").unwrap();
        }
        out.flush().unwrap();
    }
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.pass).map(|o| o.to_string()).collect();
    assert!(failed.is_empty(), "failing criteria:\n{}", failed.join("\n"));
}
