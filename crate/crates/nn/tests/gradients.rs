use std::time::Instant;

use sketchdial_nn::{attention_causality_leak, run_suite};

#[test]
fn every_op_matches_finite_differences() {
    let start = Instant::now();
    let checks = run_suite(2024).unwrap();
    let mut failures = Vec::new();
    for c in &checks {
        if !(c.error < 1e-3) {
            failures.push(format!("{} {} err={:e}", c.name, c.shape, c.error));
        }
    }
    assert!(
        failures.is_empty(),
        "gradient failures:\n{}",
        failures.join("\n")
    );
    let mut names: Vec<&str> = checks.iter().map(|c| c.name.as_str()).collect();
    names.sort();
    names.dedup();
    for name in &names {
        let n = checks.iter().filter(|c| c.name == *name).count();
        assert!(n >= 3, "{name} checked on {n} shapes");
    }
    assert!(start.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn different_seeds_also_pass() {
    for seed in [1, 77] {
        for c in run_suite(seed).unwrap() {
            assert!(c.error < 1e-3, "{} {} err={:e}", c.name, c.shape, c.error);
        }
    }
}

#[test]
fn future_inputs_have_zero_gradient() {
    assert_eq!(attention_causality_leak(5).unwrap(), 0.0);
}
