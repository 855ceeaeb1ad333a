//! Brute-force oracles for the expected-imbalance computation and checks
//! that the expected-loss maximization lands on the published defaults.

use approx::assert_relative_eq;
use bartree::calibrate::{
    expected_delta, expected_nl, loss_surface, maximize_expected_loss, ExpectedLossSpec,
    LossVariant,
};
use bartree::prior::LbPriorParams;

/// Conditional imbalance mean by direct summation over the parity support,
/// written without the closed-form geometric identities the library uses.
fn conditional_mean_direct(n: u32, gamma: f64) -> f64 {
    if n <= 2 {
        return 0.0;
    }
    let mut weight_sum = 0.0;
    let mut moment_sum = 0.0;
    let mut delta = n % 2;
    while delta <= n - 2 {
        // Anchor at the largest term so either sign of gamma stays finite.
        let w = (-gamma * (delta as f64 - (n - 2) as f64)).exp();
        weight_sum += w;
        moment_sum += delta as f64 * w;
        delta += 2;
    }
    moment_sum / weight_sum
}

/// Marginal expected imbalance by direct summation, truncated only when the
/// remaining geometric mass cannot move the result at 1e-14.
fn expected_delta_direct(omega: f64, gamma: f64) -> f64 {
    let p = 1.0 - (-omega).exp();
    let mut total = 0.0;
    let mut n = 1u32;
    loop {
        let weight = p * (-omega * (n - 1) as f64).exp();
        total += weight * conditional_mean_direct(n, gamma);
        // Tail bound: remaining mass times the largest possible mean.
        let tail = (-omega * n as f64).exp();
        if tail * (n as f64 + 2.0 / omega) < 1e-14 {
            return total;
        }
        n += 1;
    }
}

#[test]
fn expected_delta_matches_direct_summation() {
    let cases = [
        (1.561646, 0.628502),
        (1.568110, 0.628642),
        (0.5, 0.62),
        (0.5, 1.5),
        (1.0, -0.5),
        (2.0, 4.0),
        (0.25, 0.1),
    ];
    for (omega, gamma) in cases {
        let params = LbPriorParams::new(omega, gamma).unwrap();
        let library = expected_delta(&params, 1e-12);
        let direct = expected_delta_direct(omega, gamma);
        assert!(
            (library - direct).abs() < 1e-10,
            "expected imbalance {library} vs direct {direct} at omega = {omega}, gamma = {gamma}"
        );
    }
}

#[test]
fn expected_nl_is_geometric_mean() {
    for &omega in &[0.25f64, 0.5, 1.0, 1.561646, 3.0] {
        let p = 1.0 - (-omega).exp();
        // Mean of the shifted geometric on {1, 2, ...} by direct summation.
        let mut mean = 0.0;
        for n in 1..10_000u32 {
            mean += n as f64 * p * (1.0 - p).powi(n as i32 - 1);
        }
        assert_relative_eq!(expected_nl(omega), mean, max_relative = 1e-10);
    }
}

/// Both optimum coordinates must land within 0.01 of the published default
/// pairs, and within 5e-4 of the frozen high-precision values.
#[test]
fn loss_maxima_match_published_defaults() {
    let el1 = maximize_expected_loss(&ExpectedLossSpec::new(LossVariant::El1)).unwrap();
    assert!((el1.omega - 1.568).abs() < 0.01, "EL1 omega {}", el1.omega);
    assert!((el1.gamma - 0.628).abs() < 0.01, "EL1 gamma {}", el1.gamma);
    assert!((el1.omega - 1.568110).abs() < 5e-4);
    assert!((el1.gamma - 0.628642).abs() < 5e-4);

    let el2 = maximize_expected_loss(&ExpectedLossSpec::new(LossVariant::El2)).unwrap();
    assert!((el2.omega - 1.561).abs() < 0.01, "EL2 omega {}", el2.omega);
    assert!((el2.gamma - 0.629).abs() < 0.01, "EL2 gamma {}", el2.gamma);
    assert!((el2.omega - 1.561646).abs() < 5e-4);
    assert!((el2.gamma - 0.628502).abs() < 5e-4);
}

/// The two variants share the leaf term; their imbalance terms differ by
/// the factor omega.
#[test]
fn variants_differ_by_omega_weight() {
    let spec1 = ExpectedLossSpec::new(LossVariant::El1);
    let spec2 = ExpectedLossSpec::new(LossVariant::El2);
    let s1 = loss_surface(&spec1, 0.25);
    let s2 = loss_surface(&spec2, 0.25);
    assert_eq!(s1.len(), s2.len());
    for ((w1, g1, v1), (w2, g2, v2)) in s1.into_iter().zip(s2) {
        assert_eq!((w1, g1), (w2, g2));
        let leaf_term = w1 * w1 / w1.exp_m1();
        let excess1 = v1 - leaf_term;
        let excess2 = v2 - leaf_term;
        assert_relative_eq!(excess2, w1 * excess1, max_relative = 1e-10, epsilon = 1e-12);
    }
}

/// Truncating the leaf-count series earlier must not move the result by
/// more than the discarded mass allows.
#[test]
fn truncation_tolerance_is_respected() {
    let params = LbPriorParams::new(0.5, 0.62).unwrap();
    let coarse = expected_delta(&params, 1e-6);
    let fine = expected_delta(&params, 1e-14);
    assert!((coarse - fine).abs() < 1e-4, "coarse {coarse} vs fine {fine}");
    assert_relative_eq!(coarse, fine, max_relative = 1e-4);
}

/// Larger gamma concentrates the imbalance near its parity floor, so the
/// marginal mean must fall.
#[test]
fn expected_delta_decreases_in_gamma() {
    let mut previous = f64::INFINITY;
    for &gamma in &[0.1, 0.3, 0.62, 1.0, 2.0, 4.0] {
        let params = LbPriorParams::new(1.0, gamma).unwrap();
        let value = expected_delta(&params, 1e-12);
        assert!(value < previous, "expected imbalance not decreasing at gamma = {gamma}");
        previous = value;
    }
}
