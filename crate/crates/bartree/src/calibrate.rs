//! Default-parameter selection for the loss-based prior: expected values of
//! the topology statistics and the expected-loss maximization that yields the
//! default (omega, gamma).

use thiserror::Error;

use crate::prior::LbPriorParams;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("search range ({0}, {1}) is empty")]
    EmptyRange(f64, f64),
    #[error("truncation tolerance must be positive, got {0}")]
    TruncationTolNotPositive(f64),
    #[error("expected-loss maximum sits on the search boundary at omega={omega}, gamma={gamma}; widen the range")]
    BoundaryMaximum { omega: f64, gamma: f64 },
}

/// Which expected-loss form to maximize: EL2 weights the imbalance term by
/// omega as well as gamma.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossVariant {
    El1,
    El2,
}

/// Search specification for the expected-loss maximization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedLossSpec {
    pub variant: LossVariant,
    pub omega_range: (f64, f64),
    pub gamma_range: (f64, f64),
    pub truncation_tol: f64,
}

impl ExpectedLossSpec {
    /// The standard search box omega in (1,2), gamma in (0,4).
    pub fn new(variant: LossVariant) -> Self {
        Self { variant, omega_range: (1.0, 2.0), gamma_range: (0.0, 4.0), truncation_tol: 1e-12 }
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        let (wl, wh) = self.omega_range;
        let (gl, gh) = self.gamma_range;
        if !(wl < wh) {
            return Err(CalibrationError::EmptyRange(wl, wh));
        }
        if !(gl < gh) {
            return Err(CalibrationError::EmptyRange(gl, gh));
        }
        if !(self.truncation_tol > 0.0) {
            return Err(CalibrationError::TruncationTolNotPositive(self.truncation_tol));
        }
        Ok(())
    }
}

/// Located maximum of the expected loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossMaximum {
    pub omega: f64,
    pub gamma: f64,
    pub value: f64,
}

/// Expected leaf count under the geometric leaf-count prior:
/// 1 / (1 - e^-omega) on the support {1, 2, ...}.
pub fn expected_nl(omega: f64) -> f64 {
    assert!(omega > 0.0, "omega must be positive");
    (-(-omega).exp_m1()).recip()
}

/// Conditional mean of the imbalance given the leaf count, summed from the
/// dominant end of the support so either sign of gamma is stable.
fn conditional_delta_mean(n: u32, gamma: f64) -> f64 {
    if n <= 2 {
        return 0.0;
    }
    let delta_min = (n % 2) as f64;
    let delta_max = (n - 2) as f64;
    let points = (n - 2) / 2 + 1;
    let k_max = (points - 1) as f64;
    let rho = (-2.0 * gamma.abs()).exp();
    // T = sum k rho^k / sum rho^k over k = 0..=k_max, via the finite
    // arithmetico-geometric closed forms.
    let t = if rho == 0.0 {
        0.0
    } else {
        let rk = rho.powf(k_max);
        let s0 = (1.0 - rk * rho) / (1.0 - rho);
        let s1 = rho * (1.0 - (k_max + 1.0) * rk + k_max * rk * rho) / ((1.0 - rho) * (1.0 - rho));
        s1 / s0
    };
    if gamma > 0.0 {
        delta_min + 2.0 * t
    } else {
        delta_max - 2.0 * t
    }
}

/// Excess of the conditional imbalance mean over its parity floor.
fn conditional_delta_excess(n: u32, gamma: f64) -> f64 {
    conditional_delta_mean(n, gamma) - (n % 2) as f64
}

/// Number of leaf-count terms needed before the geometric tail mass drops
/// below the tolerance.
fn truncation_terms(omega: f64, tol: f64) -> u32 {
    // Tail mass beyond n terms is e^{-omega n}.
    ((-tol.ln() / omega).ceil() as u32).max(1)
}

/// Marginal expected imbalance Sum_n pi(n) E(Delta | n), truncated once the
/// geometric tail mass falls below `truncation_tol`.
pub fn expected_delta(params: &LbPriorParams, truncation_tol: f64) -> f64 {
    assert!(truncation_tol > 0.0, "truncation tolerance must be positive");
    let omega = params.omega();
    let gamma = params.gamma();
    let p = -(-omega).exp_m1();
    let mut total = 0.0;
    for n in 1..=truncation_terms(omega, truncation_tol) {
        let weight = (-omega * (n - 1) as f64).exp() * p;
        total += weight * conditional_delta_mean(n, gamma);
    }
    total
}

/// Marginal expected excess imbalance (conditional means centered at their
/// parity floor before averaging over the leaf-count prior).
fn expected_delta_excess(omega: f64, gamma: f64, tol: f64) -> f64 {
    let p = -(-omega).exp_m1();
    let mut total = 0.0;
    for n in 1..=truncation_terms(omega, tol) {
        let weight = (-omega * (n - 1) as f64).exp() * p;
        total += weight * conditional_delta_excess(n, gamma);
    }
    total
}

/// The expected-loss objective. Both topology moments enter centered at the
/// single-leaf baseline (leaf count above 1, imbalance above its parity
/// floor), which measures the complexity the prior actually spends; the
/// uncentered moments grow monotonically in both parameters and admit no
/// interior maximum.
fn expected_loss(omega: f64, gamma: f64, variant: LossVariant, tol: f64) -> f64 {
    let leaf_term = omega * omega * omega.exp_m1().recip();
    let delta_weight = match variant {
        LossVariant::El1 => gamma,
        LossVariant::El2 => omega * gamma,
    };
    leaf_term + delta_weight * expected_delta_excess(omega, gamma, tol)
}

const GRID_STEP: f64 = 0.01;
const REFINE_TOL: f64 = 1e-4;

/// Maximizes the expected loss over the spec's box: coarse 0.01 grid, then
/// coordinate-wise golden-section refinement. A maximum on the box boundary
/// is reported as an error since it signals a mis-specified range.
pub fn maximize_expected_loss(spec: &ExpectedLossSpec) -> Result<LossMaximum, CalibrationError> {
    let tol = spec.truncation_tol;
    let variant = spec.variant;
    maximize_on_grid(|w, g| expected_loss(w, g, variant, tol), spec)
}

/// Dense objective evaluations over the search box (for surface export).
pub fn loss_surface(spec: &ExpectedLossSpec, step: f64) -> Vec<(f64, f64, f64)> {
    let omegas = grid_points(spec.omega_range, step);
    let gammas: Vec<f64> =
        grid_points(spec.gamma_range, step).into_iter().filter(|g| *g != 0.0).collect();
    let mut out = Vec::with_capacity(omegas.len() * gammas.len());
    for &w in &omegas {
        for &g in &gammas {
            out.push((w, g, expected_loss(w, g, spec.variant, spec.truncation_tol)));
        }
    }
    out
}

fn grid_points((lo, hi): (f64, f64), step: f64) -> Vec<f64> {
    let count = ((hi - lo) / step).round() as usize;
    let mut points: Vec<f64> = (0..=count).map(|i| lo + i as f64 * step).collect();
    if let Some(last) = points.last_mut() {
        *last = last.min(hi);
    }
    points
}

fn maximize_on_grid<F: Fn(f64, f64) -> f64>(
    objective: F,
    spec: &ExpectedLossSpec,
) -> Result<LossMaximum, CalibrationError> {
    spec.validate()?;
    let omegas = grid_points(spec.omega_range, GRID_STEP);
    // gamma = 0 is outside the prior's parameter space; its grid line is
    // skipped, making the first valid line the effective boundary.
    let gammas: Vec<f64> =
        grid_points(spec.gamma_range, GRID_STEP).into_iter().filter(|g| *g != 0.0).collect();
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    for (i, &w) in omegas.iter().enumerate() {
        for (j, &g) in gammas.iter().enumerate() {
            let v = objective(w, g);
            if v > best.0 {
                best = (v, i, j);
            }
        }
    }
    let (_, i, j) = best;
    if i == 0 || i == omegas.len() - 1 || j == 0 || j == gammas.len() - 1 {
        return Err(CalibrationError::BoundaryMaximum { omega: omegas[i], gamma: gammas[j] });
    }
    // Local refinement inside the bracketing grid cells.
    let mut omega = omegas[i];
    let mut gamma = gammas[j];
    for _ in 0..40 {
        omega = golden_max(|w| objective(w, gamma), omegas[i - 1], omegas[i + 1]);
        gamma = golden_max(|g| objective(omega, g), gammas[j - 1], gammas[j + 1]);
    }
    Ok(LossMaximum { omega, gamma, value: objective(omega, gamma) })
}

/// Golden-section search for the maximum of a unimodal function on [a, b].
fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > REFINE_TOL * 0.01 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
