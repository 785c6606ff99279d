//! Q-Wiener and Q-fractional Brownian noise on a time grid.
//!
//! Paths are stored per mode as standard (unit-intensity) processes; the
//! covariance weights `√λ_i` of the `Q` operators enter only when the paths are
//! integrated against.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed;
use crate::special::{beta, GaussLegendre};

const CHOLESKY_JITTER: f64 = 1e-12;
/// Target width of the Wiener subcells used by the Volterra generator.
pub const VOLTERRA_SUBSTEP: f64 = 1.0 / 2048.0;

/// Trace-class covariance of a Q-Wiener or Q-fBm noise, truncated to `dim` modes.
#[derive(Debug, Clone, PartialEq)]
pub struct QStructure {
    eigenvalues: Vec<f64>,
}

impl QStructure {
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::domain("noise needs at least one mode"));
        }
        if eigenvalues.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(Error::domain("Q eigenvalues must be finite and >= 0"));
        }
        Ok(Self { eigenvalues })
    }

    /// `λ_i = i^(-decay)`, `i = 1..=dim`.
    pub fn power_law(dim: usize, decay: f64) -> Result<Self> {
        Self::new((1..=dim).map(|i| (i as f64).powf(-decay)).collect())
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }
}

/// `𝔛_H = sqrt(H(2H-1) / B(2-2H, H-1/2))`.
pub fn x_h_constant(hurst: f64) -> Result<f64> {
    if !(hurst > 0.5 && hurst < 1.0) {
        return Err(Error::domain(format!("Hurst index {hurst} must lie in (1/2, 1)")));
    }
    Ok((hurst * (2.0 * hurst - 1.0) / beta(2.0 - 2.0 * hurst, hurst - 0.5)).sqrt())
}

#[derive(Debug, Clone)]
pub struct FbmParams {
    pub hurst: f64,
    pub c_h: f64,
    rule: GaussLegendre,
}

impl FbmParams {
    pub fn new(hurst: f64) -> Result<Self> {
        Ok(Self {
            hurst,
            c_h: x_h_constant(hurst)?,
            rule: GaussLegendre::new(16),
        })
    }
}

/// Molchan-Golosov kernel `K_H(t, e) = 𝔛_H e^(1/2-H) ∫_e^t (τ-e)^(H-3/2) τ^(H-1/2) dτ`,
/// zero for `t <= e`.
pub fn kernel_k(params: &FbmParams, t: f64, e: f64) -> Result<f64> {
    if !(e > 0.0) {
        return Err(Error::domain(format!("kernel needs e > 0, got {e}")));
    }
    if t <= e {
        return Ok(0.0);
    }
    let a = params.hurst - 0.5;
    // u = (τ-e)^a removes the endpoint singularity.
    let p = 1.0 / a;
    let upper = (t - e).powf(a);
    let inner = params
        .rule
        .integrate_composite(0.0, upper, 16, |u| (e + u.powf(p)).powf(a));
    Ok(params.c_h * e.powf(-a) * inner / a)
}

/// `∫_0^min(t,s) K_H(t,u) K_H(s,u) du`, which must reproduce the fBm covariance.
pub fn kernel_covariance(params: &FbmParams, t: f64, s: f64) -> Result<f64> {
    let m = t.min(s);
    if !(m > 0.0) {
        return Ok(0.0);
    }
    let h = params.hurst;
    // u = w^(1/(2-2H)) cancels the u^(1-2H) singularity at the origin.
    let gamma = 1.0 / (2.0 - 2.0 * h);
    let upper = m.powf(2.0 - 2.0 * h);
    let mut err = None;
    let integral = params.rule.integrate_composite(0.0, upper, 64, |w| {
        let u = w.powf(gamma);
        let kt = kernel_k(params, t, u);
        let ks = kernel_k(params, s, u);
        match (kt, ks) {
            (Ok(a), Ok(b)) => a * b * u / w * gamma,
            (Err(e), _) | (_, Err(e)) => {
                err = Some(e);
                0.0
            }
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(integral),
    }
}

/// `R(t,s) = (t^2H + s^2H - |t-s|^2H) / 2`.
pub fn fbm_covariance(hurst: f64, t: f64, s: f64) -> f64 {
    let p = 2.0 * hurst;
    0.5 * (t.powf(p) + s.powf(p) - (t - s).abs().powf(p))
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::domain("time grid needs at least two points"));
    }
    if grid[0] < 0.0 || grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::domain("time grid must be finite and start at t >= 0"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("time grid must be strictly increasing"));
    }
    Ok(())
}

/// Cached lower Cholesky factor of the fBm covariance on a grid.
#[derive(Debug, Clone)]
pub struct FbmCholesky {
    factor: DMatrix<f64>,
    /// Index of the first strictly positive grid point.
    offset: usize,
    points: usize,
}

impl FbmCholesky {
    pub fn new(hurst: f64, grid: &[f64]) -> Result<Self> {
        if !(hurst >= 0.5 && hurst < 1.0) {
            return Err(Error::domain(format!("Hurst index {hurst} must lie in [1/2, 1)")));
        }
        check_grid(grid)?;
        let offset = usize::from(grid[0] == 0.0);
        let pts = &grid[offset..];
        let n = pts.len();
        let cov = DMatrix::from_fn(n, n, |i, j| fbm_covariance(hurst, pts[i], pts[j]));
        let factor = match cov.clone().cholesky() {
            Some(c) => c.l(),
            None => {
                let jittered = cov + DMatrix::identity(n, n) * CHOLESKY_JITTER;
                jittered
                    .cholesky()
                    .ok_or_else(|| {
                        Error::numeric("fBm covariance is not positive definite after jitter")
                    })?
                    .l()
            }
        };
        Ok(Self {
            factor,
            offset,
            points: grid.len(),
        })
    }

    /// One path per mode, columns indexed by mode.
    pub fn sample<R: Rng>(&self, rng: &mut R, modes: usize) -> DMatrix<f64> {
        let n = self.factor.nrows();
        let mut out = DMatrix::zeros(self.points, modes);
        let mut z = DVector::<f64>::zeros(n);
        for m in 0..modes {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            // Lower-triangular product without touching the zero half.
            for i in 0..n {
                let row = self.factor.row(i);
                let mut acc = 0.0;
                for j in 0..=i {
                    acc += row[j] * z[j];
                }
                out[(self.offset + i, m)] = acc;
            }
        }
        out
    }
}

/// fBm paths by Cholesky factorization of the exact covariance. Rows follow
/// `grid`, columns are independent modes; a grid point at 0 gets the value 0.
pub fn fbm_paths_cholesky(
    hurst: f64,
    grid: &[f64],
    modes: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let chol = FbmCholesky::new(hurst, grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(chol.sample(&mut rng, modes))
}

/// Precomputed Volterra weights `K_H(t_k, m_j)` over a fine Wiener subgrid.
#[derive(Debug, Clone)]
pub struct FbmVolterra {
    /// `weights[(k, j)] = K_H(t_k, m_j)` for subcells `j` left of `t_k`.
    weights: DMatrix<f64>,
    sub_dt: Vec<f64>,
    /// Subcell index at which each grid point ends.
    sub_end: Vec<usize>,
}

impl FbmVolterra {
    pub fn new(hurst: f64, grid: &[f64]) -> Result<Self> {
        let params = FbmParams::new(hurst)?;
        check_grid(grid)?;
        let mut edges = vec![0.0];
        let mut sub_end = Vec::with_capacity(grid.len());
        if grid[0] > 0.0 {
            push_subcells(&mut edges, 0.0, grid[0]);
        }
        sub_end.push(edges.len() - 1);
        for w in grid.windows(2) {
            push_subcells(&mut edges, w[0], w[1]);
            sub_end.push(edges.len() - 1);
        }
        let cells = edges.len() - 1;
        let sub_dt: Vec<f64> = edges.windows(2).map(|w| w[1] - w[0]).collect();
        // K_H(t,u) ~ u^(1/2-H) near the origin, so each midpoint value is
        // rescaled to carry the exact cell mass of u^(1-2H).
        let g = 2.0 - 2.0 * hurst;
        let correction: Vec<f64> = edges
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                let exact = (w[1].powf(g) - w[0].powf(g)) / g;
                (exact / ((w[1] - w[0]) * mid.powf(1.0 - 2.0 * hurst))).sqrt()
            })
            .collect();
        let mut weights = DMatrix::zeros(grid.len(), cells);
        for (k, &t) in grid.iter().enumerate() {
            for j in 0..sub_end[k] {
                let mid = 0.5 * (edges[j] + edges[j + 1]);
                weights[(k, j)] = kernel_k(&params, t, mid)? * correction[j];
            }
        }
        Ok(Self {
            weights,
            sub_dt,
            sub_end,
        })
    }

    /// Returns `(fbm, driving_wiener)` sampled on the coarse grid.
    pub fn sample<R: Rng>(&self, rng: &mut R, modes: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let points = self.sub_end.len();
        let mut fbm = DMatrix::zeros(points, modes);
        let mut wiener = DMatrix::zeros(points, modes);
        let mut dw = vec![0.0; self.sub_dt.len()];
        for m in 0..modes {
            for (d, &h) in dw.iter_mut().zip(&self.sub_dt) {
                let z: f64 = rng.sample(StandardNormal);
                *d = h.sqrt() * z;
            }
            for k in 0..points {
                let end = self.sub_end[k];
                let row = self.weights.row(k);
                let mut acc = 0.0;
                for j in 0..end {
                    acc += row[j] * dw[j];
                }
                fbm[(k, m)] = acc;
                wiener[(k, m)] = dw[..end].iter().sum();
            }
        }
        (fbm, wiener)
    }
}

fn push_subcells(edges: &mut Vec<f64>, a: f64, b: f64) {
    let n = ((b - a) / VOLTERRA_SUBSTEP).ceil().max(1.0) as usize;
    for i in 1..=n {
        edges.push(if i == n { b } else { a + (b - a) * i as f64 / n as f64 });
    }
}

/// fBm paths from the kernel representation `B^H(t) = ∫ K_H(t,e) dW(e)`,
/// together with the driving Wiener paths sampled on `grid`.
pub fn fbm_paths_volterra(
    hurst: f64,
    grid: &[f64],
    modes: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let v = FbmVolterra::new(hurst, grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(v.sample(&mut rng, modes))
}

/// Standard Brownian paths, one column per mode.
pub fn wiener_paths<R: Rng>(rng: &mut R, grid: &[f64], modes: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(grid.len(), modes);
    for m in 0..modes {
        let mut w = if grid[0] > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            grid[0].sqrt() * z
        } else {
            0.0
        };
        out[(0, m)] = w;
        for k in 1..grid.len() {
            let z: f64 = rng.sample(StandardNormal);
            w += (grid[k] - grid[k - 1]).sqrt() * z;
            out[(k, m)] = w;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FbmMethod {
    Cholesky,
    Volterra,
}

/// Reusable generator of [`NoiseRealization`]s on a fixed grid.
#[derive(Debug, Clone)]
pub struct NoiseGenerator {
    grid: Vec<f64>,
    wiener_modes: usize,
    fbm_modes: usize,
    fbm: FbmSource,
}

#[derive(Debug, Clone)]
enum FbmSource {
    Cholesky(FbmCholesky),
    Volterra(FbmVolterra),
}

impl NoiseGenerator {
    pub fn new(
        grid: Vec<f64>,
        wiener_modes: usize,
        fbm_modes: usize,
        hurst: f64,
        method: FbmMethod,
    ) -> Result<Self> {
        check_grid(&grid)?;
        if grid[0] != 0.0 {
            return Err(Error::domain("noise grid must start at 0"));
        }
        let fbm = match method {
            FbmMethod::Cholesky => FbmSource::Cholesky(FbmCholesky::new(hurst, &grid)?),
            FbmMethod::Volterra => FbmSource::Volterra(FbmVolterra::new(hurst, &grid)?),
        };
        Ok(Self {
            grid,
            wiener_modes,
            fbm_modes,
            fbm,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Realization `replicate` of the ensemble rooted at `base_seed`.
    pub fn realize(&self, base_seed: u64, replicate: u64) -> NoiseRealization {
        let mut wrng = seed::rng(base_seed, replicate, seed::tag::WIENER);
        let wiener = wiener_paths(&mut wrng, &self.grid, self.wiener_modes);
        let mut frng = seed::rng(base_seed, replicate, seed::tag::FBM);
        let fbm = match &self.fbm {
            FbmSource::Cholesky(c) => c.sample(&mut frng, self.fbm_modes),
            FbmSource::Volterra(v) => v.sample(&mut frng, self.fbm_modes).0,
        };
        NoiseRealization {
            grid: self.grid.clone(),
            wiener,
            fbm,
            seed: seed::mix(base_seed, replicate, 0),
        }
    }
}

/// One sample of both noises. `wiener[(k, i)]` is the unit-intensity path of
/// mode `i` at `grid[k]`; likewise for `fbm`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub grid: Vec<f64>,
    pub wiener: DMatrix<f64>,
    pub fbm: DMatrix<f64>,
    pub seed: u64,
}

impl NoiseRealization {
    /// Noise-free realization, for deterministic runs.
    pub fn zeros(grid: Vec<f64>, wiener_modes: usize, fbm_modes: usize) -> Self {
        let n = grid.len();
        Self {
            grid,
            wiener: DMatrix::zeros(n, wiener_modes),
            fbm: DMatrix::zeros(n, fbm_modes),
            seed: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn wiener_increment(&self, step: usize, mode: usize) -> f64 {
        self.wiener[(step + 1, mode)] - self.wiener[(step, mode)]
    }

    pub fn fbm_increment(&self, step: usize, mode: usize) -> f64 {
        self.fbm[(step + 1, mode)] - self.fbm[(step, mode)]
    }
}

fn check_integrand(values: &DMatrix<f64>, steps: usize, q: &QStructure, modes: usize) -> Result<()> {
    if values.nrows() != steps {
        return Err(Error::domain(format!(
            "integrand has {} steps, grid has {steps}",
            values.nrows()
        )));
    }
    if values.ncols() != q.dim() || modes != q.dim() {
        return Err(Error::domain("integrand, noise and Q dimensions disagree"));
    }
    Ok(())
}

/// Left-point sum `Σ_j Υ(t_j) √λ_i ΔW_i(t_j)` per mode; `integrand` is steps × modes.
pub fn ito_integral(
    integrand: &DMatrix<f64>,
    realization: &NoiseRealization,
    q_struct: &QStructure,
) -> Result<DVector<f64>> {
    check_integrand(integrand, realization.steps(), q_struct, realization.wiener.ncols())?;
    Ok(DVector::from_fn(q_struct.dim(), |i, _| {
        let w = q_struct.eigenvalues()[i].sqrt();
        (0..realization.steps())
            .map(|j| integrand[(j, i)] * w * realization.wiener_increment(j, i))
            .sum()
    }))
}

/// Riemann-Stieltjes sum `Σ_j Ψ(t_j) √λ_i ΔB^H_i(t_j)` per mode for deterministic `Ψ`.
pub fn fbm_integral(
    psi: &DMatrix<f64>,
    realization: &NoiseRealization,
    q_struct: &QStructure,
) -> Result<DVector<f64>> {
    check_integrand(psi, realization.steps(), q_struct, realization.fbm.ncols())?;
    Ok(DVector::from_fn(q_struct.dim(), |i, _| {
        let w = q_struct.eigenvalues()[i].sqrt();
        (0..realization.steps())
            .map(|j| psi[(j, i)] * w * realization.fbm_increment(j, i))
            .sum()
    }))
}
