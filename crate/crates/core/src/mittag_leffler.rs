//! Two-parameter Mittag-Leffler function and the per-mode resolvent propagators.
//!
//! For a diagonal generator with eigenvalue `λ ≤ 0` the Caputo resolvent families
//! act on each mode as
//!
//! ```text
//! T_q(t) = E_q(λ t^q)                 S_q(t) = t^(q-1) E_{q,q}(λ t^q)
//! ```
//!
//! `E_{α,β}` is evaluated by one of three routes, chosen per argument:
//! the power series (when its cancellation error stays below ~1e-11),
//! the algebraic asymptotic expansion on the negative axis (when its optimal
//! truncation is below 1e-15) and otherwise the real integral representation
//! of Gorenflo, Loutchko and Luchko, integrated by tanh-sinh quadrature.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::special::{recip_gamma, CompensatedSum};

/// Largest positive argument accepted by [`ml_eval`].
pub const MAX_POSITIVE_ARGUMENT: f64 = 50.0;

const SERIES_ERROR_BUDGET: f64 = 2e-11;
const ASYMPTOTIC_ERROR_BUDGET: f64 = 1e-15;

/// Arguments of `E_{α,β}(z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlArgs {
    pub alpha: f64,
    pub beta: f64,
    pub z: f64,
}

impl MlArgs {
    pub fn new(alpha: f64, beta: f64, z: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(Error::domain(format!("alpha = {alpha} outside (0, 2]")));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::domain(format!("beta = {beta} must be positive")));
        }
        if !z.is_finite() {
            return Err(Error::domain("Mittag-Leffler argument must be finite"));
        }
        Ok(Self { alpha, beta, z })
    }
}

/// Evaluates `E_{α,β}(z)` for real `z`.
pub fn ml_eval(args: MlArgs) -> Result<f64> {
    let MlArgs { alpha, beta, z } = MlArgs::new(args.alpha, args.beta, args.z)?;
    if z > MAX_POSITIVE_ARGUMENT {
        return Err(Error::domain(format!(
            "argument {z} beyond the evaluable range (z <= {MAX_POSITIVE_ARGUMENT})"
        )));
    }
    if z == 0.0 {
        return Ok(recip_gamma(beta));
    }
    if alpha == 1.0 && beta == 1.0 {
        return Ok(z.exp());
    }

    let series = power_series(alpha, beta, z);
    if z > 0.0 || series.error_estimate <= SERIES_ERROR_BUDGET {
        return finite(series.value);
    }

    // Negative axis with heavy cancellation in the series.
    if alpha < 1.0 {
        if let Some(v) = asymptotic_negative(alpha, beta, z) {
            return Ok(v);
        }
    }
    if alpha == 1.0 {
        return Err(Error::domain(format!(
            "E_(1,{beta}) at z = {z} needs a method not implemented here"
        )));
    }
    integral_negative(alpha, beta, z)
}

/// Convenience wrapper around [`ml_eval`].
pub fn mittag_leffler(alpha: f64, beta: f64, z: f64) -> Result<f64> {
    ml_eval(MlArgs::new(alpha, beta, z)?)
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numeric("Mittag-Leffler value overflowed"))
    }
}

struct SeriesValue {
    value: f64,
    error_estimate: f64,
}

fn power_series(alpha: f64, beta: f64, z: f64) -> SeriesValue {
    let mut sum = CompensatedSum::default();
    let mut abs_sum = 0.0;
    let mut zk = 1.0;
    let mut small_run = 0;
    for k in 0..5000 {
        let term = zk * recip_gamma(alpha * k as f64 + beta);
        if !term.is_finite() {
            break;
        }
        sum.add(term);
        abs_sum += term.abs();
        if term.abs() <= 1e-18 * abs_sum.max(1e-300) {
            small_run += 1;
            if small_run >= 3 {
                break;
            }
        } else {
            small_run = 0;
        }
        zk *= z;
        if !zk.is_finite() {
            break;
        }
    }
    SeriesValue {
        value: sum.value(),
        // per-term error is dominated by the ~1e-14 relative accuracy of Γ
        error_estimate: 1e-13 * abs_sum,
    }
}

/// `E_{α,β}(z) ≈ -Σ z^{-k}/Γ(β-αk)` for `z → -∞`, accepted only when the
/// smallest term is below the error budget.
fn asymptotic_negative(alpha: f64, beta: f64, z: f64) -> Option<f64> {
    let inv = 1.0 / z;
    let mut pow = 1.0;
    let mut sum = 0.0;
    let mut last = f64::INFINITY;
    for k in 1..200 {
        pow *= inv;
        let rg = recip_gamma(beta - alpha * k as f64);
        if rg == 0.0 {
            continue;
        }
        let term = -pow * rg;
        if term.abs() > last {
            break;
        }
        sum += term;
        last = term.abs();
        if last < ASYMPTOTIC_ERROR_BUDGET * 1e-3 {
            break;
        }
    }
    (last < ASYMPTOTIC_ERROR_BUDGET).then_some(sum)
}

/// Real-line integral representation for `z < 0`, valid for `β < 1 + α`;
/// larger `β` is reduced with `E_{α,β}(z) = (E_{α,β-α}(z) - 1/Γ(β-α)) / z`.
fn integral_negative(alpha: f64, beta: f64, z: f64) -> Result<f64> {
    debug_assert!(z < 0.0);
    if beta >= 1.0 + alpha {
        let lower = integral_negative(alpha, beta - alpha, z)?;
        return Ok((lower - recip_gamma(beta - alpha)) / z);
    }
    if (alpha - 1.0).abs() < 0.02 {
        return Err(Error::domain(format!(
            "integral representation is ill-conditioned at alpha = {alpha}"
        )));
    }

    let x = -z;
    let sin_a = (PI * (1.0 - beta)).sin();
    let sin_b = (PI * (1.0 - beta + alpha)).sin();
    let cos_pa = (PI * alpha).cos();
    // Substituting χ = s^α turns exp(-χ^{1/α}) into exp(-s).
    let kernel = |s: f64| -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let sa = s.powf(alpha);
        let num = sa * sin_a - z * sin_b;
        let den = sa * sa - 2.0 * sa * z * cos_pa + z * z;
        s.powf(alpha - beta) * (-s).exp() * num / den
    };

    // The rational factor peaks where s^α = x·(-cos πα); split there so the
    // tanh-sinh nodes cluster on both sides of it.
    let peak = if cos_pa < 0.0 {
        (x * -cos_pa).powf(1.0 / alpha)
    } else {
        0.0
    };
    const TAIL: f64 = 60.0;
    let tol = 1e-15;
    let integral = if peak > 0.0 && peak < 45.0 {
        quadrature::double_exponential::integrate(kernel, 0.0, peak, tol).integral
            + quadrature::double_exponential::integrate(kernel, peak, peak + TAIL, tol).integral
    } else {
        let mid = 8.0;
        quadrature::double_exponential::integrate(kernel, 0.0, mid, tol).integral
            + quadrature::double_exponential::integrate(kernel, mid, TAIL, tol).integral
    };
    let mut value = integral / PI;

    if alpha > 1.0 {
        // Two conjugate poles of the Laplace transform lie inside the contour.
        let r = x.powf(1.0 / alpha);
        let phi = PI / alpha;
        let amp = x.powf((1.0 - beta) / alpha) * (r * phi.cos()).exp();
        let angle = phi * (1.0 - beta) + r * phi.sin();
        value += 2.0 / alpha * amp * angle.cos();
    }
    finite(value)
}

fn check_order(q: f64) -> Result<()> {
    if !(q > 0.5 && q < 1.0) {
        return Err(Error::domain(format!("q = {q} must lie in (1/2, 1)")));
    }
    Ok(())
}

/// Scalar symbol of `T_q(t)`: `E_q(λ t^q)`.
pub fn propagator_t(q: f64, lambda: f64, t: f64) -> Result<f64> {
    check_order(q)?;
    if lambda > 0.0 {
        return Err(Error::domain(format!("eigenvalue {lambda} must be <= 0")));
    }
    if !(t >= 0.0) {
        return Err(Error::domain(format!("time {t} must be >= 0")));
    }
    if t == 0.0 || lambda == 0.0 {
        return Ok(1.0);
    }
    mittag_leffler(q, 1.0, lambda * t.powf(q))
}

/// Scalar symbol of `S_q(t)`: `t^(q-1) E_{q,q}(λ t^q)`, singular at `t = 0`.
pub fn propagator_s(q: f64, lambda: f64, t: f64) -> Result<f64> {
    check_order(q)?;
    if lambda > 0.0 {
        return Err(Error::domain(format!("eigenvalue {lambda} must be <= 0")));
    }
    if !(t > 0.0) {
        return Err(Error::domain(format!("S_q(t) needs t > 0, got {t}")));
    }
    Ok(t.powf(q - 1.0) * scaled_propagator_s(q, lambda, t)?)
}

/// `t^(1-q) S_q(t) = E_{q,q}(λ t^q)`, finite down to `t = 0`.
pub fn scaled_propagator_s(q: f64, lambda: f64, t: f64) -> Result<f64> {
    if t == 0.0 || lambda == 0.0 {
        return Ok(recip_gamma(q));
    }
    mittag_leffler(q, q, lambda * t.powf(q))
}

/// Eigenfunction family of a [`SpectralOperator`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// `w_n(x) = sqrt(2/π) sin(n x)` on `(0, π)` with Dirichlet conditions.
    Sine,
    Custom,
}

/// Diagonal sectorial generator truncated to `N` modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOperator {
    eigenvalues: Vec<f64>,
    basis: Basis,
}

impl SpectralOperator {
    pub fn new(eigenvalues: Vec<f64>, basis: Basis) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::domain("spectrum must contain at least one eigenvalue"));
        }
        if eigenvalues.iter().any(|&l| !(l <= 0.0) || !l.is_finite()) {
            return Err(Error::domain("eigenvalues must be finite and <= 0"));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::domain("eigenvalues must be sorted non-increasing"));
        }
        Ok(Self { eigenvalues, basis })
    }

    /// Dirichlet Laplacian on `(0, π)`: `λ_n = -n²`, `n = 1..=modes`.
    pub fn dirichlet_laplacian(modes: usize) -> Result<Self> {
        Self::new(
            (1..=modes).map(|n| -((n * n) as f64)).collect(),
            Basis::Sine,
        )
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }
}

/// Measured uniform bounds `‖T_q(t)‖ ≤ m1`, `‖S_q(t)‖ ≤ m2 t^(q-1)` on `(0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagatorBounds {
    pub m1: f64,
    pub m2: f64,
    pub horizon: f64,
}

/// Number of logarithmically spaced sample times used by [`operator_bounds`].
pub const BOUND_GRID_POINTS: usize = 10_000;

/// Log-spaced sample times in `(0, horizon]`, spanning eight decades.
pub fn bound_grid(horizon: f64) -> Vec<f64> {
    let n = BOUND_GRID_POINTS;
    (0..n)
        .map(|i| horizon * 10f64.powf(-8.0 * (1.0 - i as f64 / (n - 1) as f64)))
        .collect()
}

pub fn operator_bounds(q: f64, spec: &SpectralOperator, horizon: f64) -> Result<PropagatorBounds> {
    check_order(q)?;
    if spec.eigenvalues.is_empty() {
        return Err(Error::domain("empty spectrum"));
    }
    if !(horizon > 0.0) {
        return Err(Error::domain("bound horizon must be positive"));
    }
    // Both suprema include the t -> 0+ limits T_q(0) = 1 and t^{1-q} S_q -> 1/Γ(q).
    let mut m1: f64 = 1.0;
    let mut m2: f64 = recip_gamma(q);
    let grid = bound_grid(horizon);
    for &lambda in &spec.eigenvalues {
        for &t in &grid {
            m1 = m1.max(propagator_t(q, lambda, t)?.abs());
            m2 = m2.max(scaled_propagator_s(q, lambda, t)?.abs());
        }
    }
    Ok(PropagatorBounds { m1, m2, horizon })
}
