mod common;

use splinenet::special::{bessel_j0, ellipe, ellipk};

#[test]
fn j0_matches_integral_representation() {
    for i in 0..=400 {
        let x = -20.0 + 0.1 * i as f64;
        let want = common::j0_trapezoid(x, 200);
        assert!((bessel_j0(x) - want).abs() < 1e-13, "x={x}: {} vs {want}", bessel_j0(x));
    }
}

/// `K(m) = ∫_0^{π/2} dθ / sqrt(1 − m sin²θ)`, likewise `E`, by the trapezoid
/// rule over a full period.
fn elliptic_quadrature(m: f64, power: f64) -> f64 {
    let n = 4000;
    let h = std::f64::consts::PI / n as f64;
    let s: f64 = (0..n).map(|i| (1.0 - m * (i as f64 * h).sin().powi(2)).powf(power)).sum();
    s * h / 2.0
}

#[test]
fn elliptic_integrals_match_quadrature() {
    for i in 0..=18 {
        let m = -0.9 + 0.1 * i as f64;
        let (k, e) = (ellipk(m).unwrap(), ellipe(m).unwrap());
        assert!((k - elliptic_quadrature(m, -0.5)).abs() < 1e-11, "K({m})");
        assert!((e - elliptic_quadrature(m, 0.5)).abs() < 1e-11, "E({m})");
    }
    assert!(ellipk(1.0).is_err());
}
