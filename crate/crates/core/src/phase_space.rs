//! Weighted history space `D_h`: uniform trajectory storage, segments `z_t`,
//! the norm `∫ h(e) sup_{e≤θ≤0} (E|φ(θ)|²)^{1/2} de` and the weight mass `ϖ`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Largest lag examined when searching for a negligible weight tail.
pub const MAX_TAIL_HORIZON: f64 = 200.0;
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

pub type WeightFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Result of [`varpi`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightMass {
    pub varpi: f64,
    pub tail_horizon: f64,
    pub tail_mass: f64,
}

/// `ϖ = ∫_{-∞}^0 h`, summing dyadic pieces `[-2^k, -2^(k-1)]` until one drops
/// below `tail_tol`.
pub fn varpi(h: &dyn Fn(f64) -> f64, tail_tol: f64) -> Result<WeightMass> {
    let piece = |a: f64, b: f64| quadrature::double_exponential::integrate(h, a, b, 1e-14).integral;
    let mut total = piece(-1.0, 0.0);
    let mut inner: f64 = 1.0;
    loop {
        let outer = (2.0 * inner).min(MAX_TAIL_HORIZON);
        let mass = piece(-outer, -inner);
        if !mass.is_finite() {
            return Err(Error::domain("weight function is not integrable"));
        }
        total += mass;
        if mass.abs() < tail_tol {
            return Ok(WeightMass {
                varpi: total,
                tail_horizon: outer,
                tail_mass: mass.abs(),
            });
        }
        if outer >= MAX_TAIL_HORIZON {
            return Err(Error::domain(format!(
                "weight tail still {mass:.3e} beyond lag {MAX_TAIL_HORIZON}"
            )));
        }
        inner = outer;
    }
}

/// Positive integrable weight `h` on `(-∞, 0]` with its certified mass.
#[derive(Clone)]
pub struct WeightFunction {
    h: WeightFn,
    mass: WeightMass,
}

impl fmt::Debug for WeightFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightFunction").field("mass", &self.mass).finish()
    }
}

impl WeightFunction {
    pub fn new(h: WeightFn, tail_tol: f64) -> Result<Self> {
        for k in 0..=64 {
            let e = -(k as f64) * 0.25;
            if !(h(e) > 0.0) {
                return Err(Error::domain(format!("weight must be positive, h({e}) = {}", h(e))));
            }
        }
        let mass = varpi(h.as_ref(), tail_tol)?;
        Ok(Self { h, mass })
    }

    /// `h(e) = scale · exp(rate · e)`.
    pub fn exponential(scale: f64, rate: f64) -> Result<Self> {
        if !(scale > 0.0 && rate > 0.0) {
            return Err(Error::domain("exponential weight needs positive scale and rate"));
        }
        Self::new(Arc::new(move |e| scale * (rate * e).exp()), DEFAULT_TAIL_TOL)
    }

    pub fn eval(&self, e: f64) -> f64 {
        (self.h)(e)
    }

    pub fn varpi(&self) -> f64 {
        self.mass.varpi
    }

    pub fn tail_horizon(&self) -> f64 {
        self.mass.tail_horizon
    }

    pub fn tail_mass(&self) -> f64 {
        self.mass.tail_mass
    }

    /// Trapezoid mass of `h` on a decreasing offset grid.
    pub fn discrete_mass(&self, offsets: &[f64]) -> f64 {
        offsets
            .windows(2)
            .map(|w| 0.5 * (w[0] - w[1]) * (self.eval(w[0]) + self.eval(w[1])))
            .sum()
    }
}

/// A history `θ ↦ φ(θ)` sampled on decreasing offsets `0 = θ_0 > θ_1 > …`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    offsets: Vec<f64>,
    values: Vec<DVector<f64>>,
}

impl HistoryBuffer {
    pub fn new(offsets: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        if offsets.is_empty() || offsets.len() != values.len() {
            return Err(Error::domain("history offsets and values must be non-empty and aligned"));
        }
        if offsets[0] != 0.0 {
            return Err(Error::domain("history grid must start at offset 0"));
        }
        if offsets.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::domain("history offsets must be strictly decreasing"));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::domain("history values must share one dimension"));
        }
        Ok(Self { offsets, values })
    }

    /// Samples `phi` on the uniform grid `0, -dt, …, -tau_max`.
    pub fn from_fn(tau_max: f64, dt: f64, phi: impl Fn(f64) -> DVector<f64>) -> Result<Self> {
        let offsets = lag_grid(tau_max, dt)?;
        let values = offsets.iter().map(|&o| phi(o)).collect();
        Self::new(offsets, values)
    }

    /// Like [`HistoryBuffer::from_fn`] but enforces `φ(0) = 0`, required of initial data.
    pub fn initial(tau_max: f64, dt: f64, phi: impl Fn(f64) -> DVector<f64>) -> Result<Self> {
        let buf = Self::from_fn(tau_max, dt, phi)?;
        if buf.values[0].iter().any(|&v| v != 0.0) {
            return Err(Error::domain("initial history must vanish at offset 0"));
        }
        Ok(buf)
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn boundary(&self) -> &DVector<f64> {
        &self.values[0]
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            offsets: self.offsets.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// Pointwise sum of two buffers on the same grid.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.offsets != other.offsets || self.dim() != other.dim() {
            return Err(Error::domain("history buffers live on different grids"));
        }
        Ok(Self {
            offsets: self.offsets.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }

    /// Root-mean-square ensemble profile `(E|φ(θ)|²)^{1/2}` as a scalar history.
    pub fn rms(ensemble: &[HistoryBuffer]) -> Result<Self> {
        let first = ensemble
            .first()
            .ok_or_else(|| Error::domain("empty ensemble"))?;
        if ensemble.iter().any(|b| b.offsets != first.offsets) {
            return Err(Error::domain("ensemble members live on different grids"));
        }
        let n = ensemble.len() as f64;
        let values = (0..first.offsets.len())
            .map(|k| {
                let ms: f64 = ensemble.iter().map(|b| b.values[k].norm_squared()).sum::<f64>() / n;
                DVector::from_element(1, ms.sqrt())
            })
            .collect();
        Self::new(first.offsets.clone(), values)
    }

    /// Running maximum of `|φ|` from offset 0 leftwards.
    fn running_sup(&self) -> Vec<f64> {
        let mut sup = 0.0f64;
        self.values
            .iter()
            .map(|v| {
                sup = sup.max(v.norm());
                sup
            })
            .collect()
    }
}

/// Uniform offsets `0, -dt, …` reaching `-tau_max`.
pub fn lag_grid(tau_max: f64, dt: f64) -> Result<Vec<f64>> {
    if !(tau_max > 0.0 && dt > 0.0 && dt <= tau_max) {
        return Err(Error::domain("lag grid needs 0 < dt <= tau_max"));
    }
    let n = (tau_max / dt).round() as usize;
    Ok((0..=n).map(|k| -(k as f64) * dt).collect())
}

/// `‖φ‖_{D_h}` truncated at the last stored offset, by trapezoid quadrature.
pub fn dh_norm(hist: &HistoryBuffer, w: &WeightFunction) -> f64 {
    let sup = hist.running_sup();
    let o = &hist.offsets;
    (0..o.len().saturating_sub(1))
        .map(|k| 0.5 * (o[k] - o[k + 1]) * (w.eval(o[k]) * sup[k] + w.eval(o[k + 1]) * sup[k + 1]))
        .sum()
}

/// Trajectory on a uniform grid `t_k = (k - origin)·dt`, covering the stored
/// history before 0 and the computed part after it. Rows are states.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    dt: f64,
    modes: usize,
    origin: usize,
    values: Vec<f64>,
}

impl Path {
    /// Zero path on `[-history_span, horizon]`.
    pub fn zeros(dt: f64, modes: usize, history_span: f64, horizon: f64) -> Result<Self> {
        if !(dt > 0.0) || modes == 0 || !(history_span >= 0.0) || !(horizon >= 0.0) {
            return Err(Error::domain("path needs dt > 0, modes > 0 and non-negative spans"));
        }
        let origin = (history_span / dt).round() as usize;
        let forward = (horizon / dt).round() as usize;
        Ok(Self {
            dt,
            modes,
            origin,
            values: vec![0.0; (origin + forward + 1) * modes],
        })
    }

    /// Path whose history part samples `phi(θ)` into the given row slice.
    pub fn with_history(
        dt: f64,
        modes: usize,
        history_span: f64,
        horizon: f64,
        phi: impl Fn(f64, &mut [f64]),
    ) -> Result<Self> {
        let mut path = Self::zeros(dt, modes, history_span, horizon)?;
        for k in 0..=path.origin {
            let t = path.time(k);
            phi(t, path.row_mut(k));
        }
        Ok(path)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Row index of `t = 0`.
    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.modes
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last_index(&self) -> usize {
        self.len() - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        (k as f64 - self.origin as f64) * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.last_index())
    }

    /// Index of the grid node at time `t`, which must lie on the grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let x = t / self.dt + self.origin as f64;
        let k = x.round();
        if (x - k).abs() > 1e-6 || k < 0.0 || k as usize >= self.len() {
            return Err(Error::domain(format!("time {t} is not a node of the path grid")));
        }
        Ok(k as usize)
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.modes..(k + 1) * self.modes]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.modes..(k + 1) * self.modes]
    }

    pub fn state(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(self.row(k))
    }

    pub fn raw(&self) -> &[f64] {
        &self.values
    }

    /// Linear interpolation between nodes; zero before the stored history.
    pub fn value_at(&self, t: f64) -> Result<DVector<f64>> {
        let x = t / self.dt + self.origin as f64;
        if x > self.last_index() as f64 + 1e-9 {
            return Err(Error::domain(format!("time {t} beyond the path horizon")));
        }
        if x < -1e-9 {
            return Ok(DVector::zeros(self.modes));
        }
        let x = x.clamp(0.0, self.last_index() as f64);
        let k = (x.floor() as usize).min(self.last_index());
        let frac = x - k as f64;
        if frac < 1e-12 || k == self.last_index() {
            return Ok(self.state(k));
        }
        Ok(self.state(k) * (1.0 - frac) + self.state(k + 1) * frac)
    }

    /// Borrowed view of the segment ending at node `index`.
    pub fn segment_at(&self, index: usize) -> Segment<'_> {
        Segment { path: self, index }
    }

    /// `z_t(θ) = z(t+θ)` on the lag grid `0, -dt, …, -tau_max`.
    pub fn segment(&self, t: f64, tau_max: f64) -> Result<HistoryBuffer> {
        if !(t >= 0.0 && t <= self.horizon() + 1e-12) {
            return Err(Error::domain(format!("segment time {t} outside [0, {}]", self.horizon())));
        }
        let offsets = lag_grid(tau_max, self.dt)?;
        let values = offsets
            .iter()
            .map(|&o| self.value_at(t + o))
            .collect::<Result<Vec<_>>>()?;
        HistoryBuffer::new(offsets, values)
    }

    /// `max_k |z(t_k)|` over nodes with `t_k ∈ [a, b]`.
    pub fn sup_norm(&self, a: f64, b: f64) -> f64 {
        (0..self.len())
            .filter(|&k| {
                let t = self.time(k);
                t >= a - 1e-12 && t <= b + 1e-12
            })
            .map(|k| self.row(k).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Scalar root-mean-square path `(E|z(t)|²)^{1/2}` of an ensemble.
    pub fn rms(ensemble: &[Path]) -> Result<Path> {
        let first = ensemble.first().ok_or_else(|| Error::domain("empty ensemble"))?;
        if ensemble
            .iter()
            .any(|p| p.dt != first.dt || p.origin != first.origin || p.values.len() != first.values.len())
        {
            return Err(Error::domain("ensemble paths live on different grids"));
        }
        let n = ensemble.len() as f64;
        let values = (0..first.len())
            .map(|k| {
                let ms: f64 = ensemble
                    .iter()
                    .map(|p| p.row(k).iter().map(|v| v * v).sum::<f64>())
                    .sum::<f64>()
                    / n;
                ms.sqrt()
            })
            .collect();
        Ok(Path {
            dt: first.dt,
            modes: 1,
            origin: first.origin,
            values,
        })
    }
}

/// Borrowed segment `z_{t_index}`: lag `l` reads `z(t_index - l·dt)`.
#[derive(Debug, Clone, Copy)]
pub struct Segment<'a> {
    path: &'a Path,
    index: usize,
}

impl<'a> Segment<'a> {
    pub fn time(&self) -> f64 {
        self.path.time(self.index)
    }

    pub fn dt(&self) -> f64 {
        self.path.dt
    }

    pub fn modes(&self) -> usize {
        self.path.modes
    }

    /// Number of stored lags, including lag 0.
    pub fn lags(&self) -> usize {
        self.index + 1
    }

    pub fn at_lag(&self, lag: usize) -> &'a [f64] {
        self.path.row(self.index - lag)
    }

    /// Reads the segment at offset `θ <= 0`, interpolating between nodes and
    /// returning zero before the stored history.
    pub fn at_offset(&self, theta: f64) -> DVector<f64> {
        let x = self.index as f64 + theta / self.path.dt;
        if x < 0.0 {
            return DVector::zeros(self.path.modes);
        }
        let k = x.floor() as usize;
        let frac = x - k as f64;
        let lo = self.path.state(k);
        if frac < 1e-12 || k >= self.index {
            return lo;
        }
        lo * (1.0 - frac) + self.path.state(k + 1) * frac
    }
}

/// Both sides of `‖z_t‖ ≤ ϖ sup_{[0,T]} |z| + ‖z_0‖`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Evaluates the history-norm inequality at `t`. Both norms use the same lag
/// grid, and `ϖ` is replaced by the trapezoid mass of `h` when that is larger
/// so the discrete inequality is exact.
pub fn embedding_check(path: &Path, t: f64, w: &WeightFunction, tau_max: f64) -> Result<EmbeddingCheck> {
    let zt = path.segment(t, tau_max)?;
    let z0 = path.segment(0.0, tau_max)?;
    let lhs = dh_norm(&zt, w);
    let varpi = w.varpi().max(w.discrete_mass(zt.offsets()));
    let rhs = varpi * path.sup_norm(0.0, path.horizon()) + dh_norm(&z0, w);
    Ok(EmbeddingCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9,
    })
}
