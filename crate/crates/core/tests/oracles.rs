use cail_core::checks::{beta_pipeline_fidelity, gradient_fidelity, monte_carlo_agreement, oracle_agreement, plumbing_equality};
use cail_core::mdp::{build_gridworld, expected_return, value_iteration, GridSpec};
use cail_core::oracle::{best_deterministic_return, exact_return, rk_seam_scan};
use cail_core::ranking::DEFAULT_EPSILON;

#[test]
fn analytic_gradients_match_differences() {
    let (inner, outer) = gradient_fidelity(5).unwrap();
    assert!(inner < 1e-4, "inner {inner}");
    assert!(outer < 1e-4, "outer {outer}");
    assert!(beta_pipeline_fidelity(3).unwrap() < 1e-3);
}

#[test]
fn fixed_points_match_linear_solves() {
    let a = oracle_agreement(10).unwrap();
    assert!(a.occupancy < 1e-5 && a.value < 1e-5 && a.occupancy_return < 1e-5, "{a:?}");
    assert!(monte_carlo_agreement().unwrap() < 3.0);
}

#[test]
fn value_iteration_finds_the_enumerated_optimum() {
    let spec = GridSpec {
        rows: 2,
        cols: 3,
        goal: (1, 2),
        ..GridSpec::default()
    };
    let mdp = build_gridworld(&spec).unwrap();
    let (_, pi) = value_iteration(&mdp, 1e-12).unwrap();
    let (best, _) = best_deterministic_return(&mdp).unwrap();
    let vi = expected_return(&mdp, &pi).unwrap();
    assert!((vi - best).abs() < 1e-8, "{vi} vs {best}");
    assert!((exact_return(&mdp, &pi).unwrap() - vi).abs() < 1e-8);
}

#[test]
fn ranking_loss_seams_are_smooth() {
    let r = rk_seam_scan(DEFAULT_EPSILON, 10_000).unwrap();
    assert!(r.max_value_jump <= 1e-12);
    assert!(r.max_derivative_jump <= 1e-3);
    assert!(r.max_curvature <= 1.1 / (2.0 * DEFAULT_EPSILON));
    assert_eq!(r.value_at_zero, [DEFAULT_EPSILON / 4.0; 2]);
}

#[test]
fn frozen_confidence_reduces_to_plain_imitation() {
    assert!(plumbing_equality().unwrap() <= 1e-12);
}
