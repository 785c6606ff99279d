//! Product integration for the weakly singular convolution `∫ S_q(t-e) f(e) de`.

use crate::error::{Error, Result};
use crate::mittag_leffler::{mittag_leffler, propagator_t, scaled_propagator_s};
use crate::special::recip_gamma;

/// How the drift samples are interpolated inside each cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProductRule {
    /// Piecewise constant from the left node: explicit and first order.
    #[default]
    LeftRectangle,
    /// Piecewise linear between nodes.
    Trapezoidal,
}

/// Exact weights of `u^(q-1)` against the two linear hat pieces on the cell
/// `[u0, u1]`: `far = ∫ u^(q-1)(u-u0)/h`, `near = ∫ u^(q-1)(u1-u)/h`.
/// `far` multiplies the sample at `u1` (older node), `near` the one at `u0`.
pub fn cell_weights(q: f64, u0: f64, u1: f64) -> (f64, f64) {
    let h = u1 - u0;
    let p0 = (u1.powf(q) - u0.powf(q)) / q;
    let p1 = (u1.powf(q + 1.0) - u0.powf(q + 1.0)) / (q + 1.0);
    ((p1 - u0 * p0) / h, (u1 * p0 - p1) / h)
}

/// `∫_a^t (t-e)^(q-1) k(t-e) f(e) de` with `f` piecewise linear on `grid`
/// (which ends at `t`), the power weight integrated exactly per cell and the
/// smooth factor `k` frozen at cell midpoints.
pub fn singular_conv_quadrature(
    q: f64,
    grid: &[f64],
    samples: &[f64],
    mut smooth: impl FnMut(f64) -> Result<f64>,
) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::domain(format!("order {q} outside (0, 1]")));
    }
    if grid.len() < 2 || grid.len() != samples.len() {
        return Err(Error::domain("need at least two grid nodes with one sample each"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("quadrature grid must be strictly increasing (t > a)"));
    }
    let t = grid[grid.len() - 1];
    let mut acc = 0.0;
    for j in 0..grid.len() - 1 {
        let u0 = t - grid[j + 1];
        let u1 = t - grid[j];
        let (far, near) = cell_weights(q, u0, u1);
        acc += smooth(0.5 * (u0 + u1))? * (far * samples[j] + near * samples[j + 1]);
    }
    Ok(acc)
}

/// `∫_a^t S_q(t-e) f(e) de` for the scalar mode with eigenvalue `λ`.
pub fn propagator_conv(q: f64, lambda: f64, grid: &[f64], samples: &[f64]) -> Result<f64> {
    singular_conv_quadrature(q, grid, samples, |u| {
        if lambda == 0.0 {
            Ok(recip_gamma(q))
        } else {
            mittag_leffler(q, q, lambda * u.powf(q))
        }
    })
}

/// Per-mode convolution weights on a uniform grid, indexed by lag `l >= 1`
/// (cell `[(l-1)Δ, lΔ]` behind the evaluation node).
#[derive(Debug, Clone)]
pub struct ModeKernel {
    /// Weight of the older node of cell `l`.
    pub far: Vec<f64>,
    /// Weight of the newer node of cell `l`.
    pub near: Vec<f64>,
    /// Cell-averaged kernel `(far + near)/Δ` for noise increments.
    pub cell: Vec<f64>,
    /// `T_q(lΔ)` for `l >= 0`.
    pub relax: Vec<f64>,
    /// `S_q(lΔ)` for `l >= 1` (entry 0 unused).
    pub node: Vec<f64>,
}

impl ModeKernel {
    pub fn new(q: f64, lambda: f64, dt: f64, max_lag: usize) -> Result<Self> {
        let n = max_lag + 1;
        let mut k = Self {
            far: vec![0.0; n],
            near: vec![0.0; n],
            cell: vec![0.0; n],
            relax: vec![1.0; n],
            node: vec![0.0; n],
        };
        for l in 1..n {
            let u0 = (l - 1) as f64 * dt;
            let u1 = l as f64 * dt;
            let (far, near) = cell_weights(q, u0, u1);
            let ml = scaled_propagator_s(q, lambda, 0.5 * (u0 + u1))?;
            k.far[l] = ml * far;
            k.near[l] = ml * near;
            k.cell[l] = ml * (far + near) / dt;
            k.relax[l] = propagator_t(q, lambda, u1)?;
            k.node[l] = u1.powf(q - 1.0) * scaled_propagator_s(q, lambda, u1)?;
        }
        Ok(k)
    }

    /// Weight of the sample at lag `l` for the left-rectangle rule.
    pub fn left_weight(&self, l: usize) -> f64 {
        self.far[l] + self.near[l]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_integrand_is_exact() {
        let grid: Vec<f64> = (0..=10).map(|k| 0.2 * k as f64).collect();
        let ones = vec![1.0; grid.len()];
        let v = singular_conv_quadrature(0.75, &grid, &ones, |_| Ok(1.0)).unwrap();
        assert!((v - 2f64.powf(0.75) / 0.75).abs() < 1e-13);
        let s = propagator_conv(0.75, 0.0, &grid, &ones).unwrap();
        assert!((s - 2f64.powf(0.75) / 0.75 / crate::special::gamma(0.75)).abs() < 1e-13);
    }

    #[test]
    fn linear_integrand_gives_beta_value() {
        let grid: Vec<f64> = (0..=7).map(|k| k as f64 / 7.0).collect();
        let v = singular_conv_quadrature(0.75, &grid, &grid, |_| Ok(1.0)).unwrap();
        assert!((v - 1.0 / (0.75 * 1.75)).abs() < 1e-13);
    }

    #[test]
    fn q_one_is_trapezoid() {
        let grid = [0.0, 0.5, 1.5, 2.0];
        let f = [1.0, 3.0, -1.0, 2.0];
        let v = singular_conv_quadrature(1.0, &grid, &f, |_| Ok(1.0)).unwrap();
        let trap = 0.5 * (0.5 * 4.0 + 1.0 * 2.0 + 0.5 * 1.0);
        assert!((v - trap).abs() < 1e-14);
    }

    #[test]
    fn rejects_empty_range() {
        assert!(propagator_conv(0.75, 0.0, &[1.0, 1.0], &[0.0, 0.0]).is_err());
        assert!(propagator_conv(0.75, 0.0, &[1.0], &[0.0]).is_err());
    }
}
