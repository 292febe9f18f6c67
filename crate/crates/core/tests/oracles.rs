//! Closed-form and independently computed reference values.

use approx::assert_relative_eq;
use critexp_core::constants::{ball_grid, qbar_scan_points};
use critexp_core::functional::{critical_level, instanton_value, solve_eta};
use critexp_core::*;
use std::f64::consts::PI;

#[test]
fn sobolev_constant_matches_gamma_closed_forms() {
    // Γ(3/2) = √π/2, Γ(3) = 2; Γ(2) = 1, Γ(4) = 6; Γ(5/2) = 3√π/4, Γ(5) = 24.
    let s3 = 3.0 * PI * (PI.sqrt() / 4.0).powf(2.0 / 3.0);
    let s4 = 8.0 * PI * (1.0f64 / 6.0).sqrt();
    let s5 = 15.0 * PI * (3.0 * PI.sqrt() / 96.0).powf(0.4);
    assert_relative_eq!(sobolev_constant(3).unwrap(), s3, max_relative = 1e-12);
    assert_relative_eq!(sobolev_constant(3).unwrap(), 3.0 * (PI / 2.0).powf(4.0 / 3.0), max_relative = 1e-12);
    assert_relative_eq!(sobolev_constant(4).unwrap(), s4, max_relative = 1e-12);
    assert_relative_eq!(sobolev_constant(5).unwrap(), s5, max_relative = 1e-12);
    assert_relative_eq!(critical_level(3).unwrap(), s3.powf(1.5) / 3.0, max_relative = 1e-12);
    assert!(sobolev_constant(2).is_err());
}

#[test]
fn instanton_profile() {
    // C₃ = 3^{1/4}; w(1) = C₃/√2.
    assert_relative_eq!(instanton_value(3, 0.0), 3f64.powf(0.25), max_relative = 1e-14);
    assert_relative_eq!(instanton_value(3, 1.0), 3f64.powf(0.25) / 2f64.sqrt(), max_relative = 1e-14);
    // N = 4: C₄ = 8^{1/2}, w = C₄/(1 + r²).
    assert_relative_eq!(instanton_value(4, 2.0), 8f64.sqrt() / 5.0, max_relative = 1e-14);
}

#[test]
fn apriori_examples() {
    let s = sobolev_constant(3).unwrap();
    let c = apriori_constants(3, 3.0, 1.0).unwrap();
    assert_relative_eq!(c.a, 1.0 / 3.0, max_relative = 1e-14);
    assert_relative_eq!(c.b, s.powi(-3) / 3.0, max_relative = 1e-14);
    assert_relative_eq!(c.b, 2.028e-3, max_relative = 1e-3);
    assert_relative_eq!(c.c1, 6.0 * c.a * s.powf(-1.5), max_relative = 1e-14);
    let residual = c.c1 * c.eta.powf(1.0) + c.c2 * c.eta.powf(4.0) - 1.0;
    assert!(residual.abs() < 1e-12);
    // t + t⁴ = 1.
    let eta = solve_eta(1.0, 1.0, 1.0, 4.0).unwrap();
    assert_relative_eq!(eta, 0.724_491_959_000_516, max_relative = 1e-10);
}

#[test]
fn box_eigenvalue_is_the_discrete_sine_mode() {
    for intervals in [10, 20] {
        let g = build_grid(GridSpec::dirichlet_cube(3, 0.0, 1.0, intervals).unwrap(), DomainShape::Box).unwrap();
        let h = 1.0 / intervals as f64;
        let exact = 3.0 * 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        assert_relative_eq!(s2(&g, 1e-9).unwrap().value, exact, max_relative = 1e-8);
    }
}

#[test]
fn ball_eigenvalue_and_scaling() {
    let base = s2(&ball_grid(3, 1.0, 36).unwrap(), 1e-8).unwrap().value;
    assert_relative_eq!(base, PI * PI, max_relative = 0.01);
    let doubled = s2(&ball_grid(3, 2.0, 36).unwrap(), 1e-8).unwrap().value;
    assert_relative_eq!(doubled * 4.0, base, max_relative = 1e-6);
}

#[test]
fn g_value_at_critical_exponent_is_the_threshold() {
    let s = sobolev_constant(3).unwrap();
    assert_relative_eq!(g_value(s, 6.0).unwrap(), critical_level(3).unwrap(), max_relative = 1e-13);
    assert_relative_eq!(critical_level(3).unwrap(), 4.273_664_068_323, max_relative = 1e-11);
}

#[test]
fn qbar_exceeds_two_when_s2_is_one_half() {
    // π²/R² = 1/2.
    let radius = (2.0f64).sqrt() * PI;
    let g = ball_grid(3, radius, 20).unwrap();
    let r = qbar(&g, 1e-4).unwrap();
    assert!(r.s2 < 0.55 && r.s2 > 0.45, "{}", r.s2);
    assert!(r.qbar > 2.0 && r.qbar <= 6.0);
    assert!(r.relative_error() <= 1e-4);
    let scan = qbar_scan_points(6.0);
    for s in &r.samples {
        if s.q < r.qbar {
            assert!(s.g < r.threshold);
        }
        assert!(scan.contains(&s.q));
    }
    // Near q = 2 the curve is essentially zero.
    assert!(r.samples[0].g < 1e-10);
}

#[test]
fn ball_and_annulus_truth_tables() {
    let (t4, s) = ball_condition(4.0, 3).unwrap();
    assert!(t4);
    assert!(!ball_condition(3.0, 3).unwrap().0);
    assert!(!ball_condition(s.sqrt(), 3).unwrap().0);
    assert!(annulus_condition(10.0, 2.0, 3).unwrap().0);
    assert!(!annulus_condition(7.0, 2.0, 3).unwrap().0);
}
