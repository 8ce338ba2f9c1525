//! Runs the full acceptance suite and prints one line per criterion.

use std::io::Write;

use slabdecay_cli::acceptance::{run_suite, VerifyOptions};

/// Bypasses the test harness capture so the lines show in every run.
fn say(line: &str) {
    let _ = writeln!(std::io::stderr(), "{line}");
}

#[test]
fn acceptance_suite() {
    let results = run_suite(&VerifyOptions::default(), 0, |c| say(&c.line()));
    let failed: Vec<u32> = results.iter().filter(|c| !c.passed).map(|c| c.id).collect();
    say(&format!("{} of {} criteria passed", results.len() - failed.len(), results.len()));
    assert_eq!(results.len(), 12);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
fn gamma43_mutation_breaks_the_bracket() {
    let opts = VerifyOptions { criteria: vec![1], flip_gamma43: true, ..Default::default() };
    let r = run_suite(&opts, 0, |_| {});
    assert!(!r[0].passed, "{}", r[0].detail);
}

#[test]
fn truncated_run_is_flagged() {
    let opts = VerifyOptions { criteria: vec![7], time_scale: 0.05, ..Default::default() };
    let r = run_suite(&opts, 0, |_| {});
    assert!(!r[0].passed);
    assert!(r[0].detail.contains("fit"), "{}", r[0].detail);
}
