//! Linear-Gaussian bounds against hand-computed values and simulation.

use exoc_core::bounds::{delta_a, delta_b, fairk_bound_looser, monte_carlo_coverage, BoundVariant, LinearCaseParams};
use exoc_core::experiment::bound_parameter_sets;

#[test]
fn hand_computed_examples() {
    let p = LinearCaseParams::unit();
    // 1 + 3·√2
    assert!((delta_a(&p).unwrap() - 5.242641).abs() < 1e-6);
    assert!((delta_a(&p).unwrap() - (1.0 + 3.0 * 2f64.sqrt())).abs() < 1e-9);
    assert!((delta_b(&p).unwrap() - 6.0).abs() < 1e-9);
    assert!(!fairk_bound_looser(&p).unwrap());

    let q = LinearCaseParams { alpha: 10.0, ..p };
    assert!((delta_a(&q).unwrap() - (10.0 + 3.0 * 2f64.sqrt())).abs() < 1e-9);
    assert!(fairk_bound_looser(&q).unwrap());
}

#[test]
fn coverage_meets_three_sigma() {
    let sets = bound_parameter_sets(20, 1);
    assert_eq!(sets.len(), 20);
    for (i, p) in sets.iter().enumerate() {
        for v in [BoundVariant::A, BoundVariant::B] {
            let c = monte_carlo_coverage(p, v, 100_000, 1 + i as u64).unwrap();
            assert!(c >= 0.995, "set {i} {v:?}: coverage {c}");
        }
    }
}

#[test]
fn coverage_is_deterministic() {
    let p = LinearCaseParams::unit();
    let a = monte_carlo_coverage(&p, BoundVariant::B, 20_000, 3).unwrap();
    assert_eq!(a, monte_carlo_coverage(&p, BoundVariant::B, 20_000, 3).unwrap());
}
