//! One PASS/FAIL line per acceptance criterion. Criteria run one after the
//! other so that the reported wall times are not inflated by each other.

use bifield::verify::{run_criterion, AcceptanceSettings, CRITERIA};

#[test]
fn acceptance_suite() {
    let settings = AcceptanceSettings::default();
    let mut failed = Vec::new();
    for id in CRITERIA {
        let outcome = run_criterion(id, settings).expect("known criterion");
        println!("{}", outcome.line());
        if !outcome.passed {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
