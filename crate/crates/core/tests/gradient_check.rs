//! Analytic gradients against central finite differences.

mod common;

use common::gradient::{check_case, check_kl_case, TOLERANCE};

#[test]
fn cross_entropy_gradients_match_finite_differences() {
    for seed in 0..12 {
        let worst = check_case(seed);
        assert!(worst <= TOLERANCE, "case {seed}: worst relative error {worst:e}");
    }
}

#[test]
fn kl_gradients_match_finite_differences() {
    for seed in 100..110 {
        let worst = check_kl_case(seed);
        assert!(worst <= TOLERANCE, "case {seed}: worst relative error {worst:e}");
    }
}
