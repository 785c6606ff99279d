//! Mild-solution time stepping: Picard iteration on each flow interval
//! `(s_i, t_{i+1}]`, forward sweeps through the impulse intervals `(t_i, s_i]`.

pub mod ledger;
pub mod quadrature;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mittag_leffler::{operator_bounds, PropagatorBounds, SpectralOperator};
use crate::noise::{FbmMethod, NoiseGenerator, NoiseRealization, QStructure};
use crate::phase_space::{dh_norm, embedding_check, HistoryBuffer, Path, Segment, WeightFunction};

pub use ledger::{evaluate_ledger, ConstantsLedger, DeclaredConstants, LedgerInputs};
pub use quadrature::{cell_weights, propagator_conv, singular_conv_quadrature, ModeKernel, ProductRule};

pub type StateFn = Arc<dyn Fn(f64, &Segment<'_>) -> DVector<f64> + Send + Sync>;
pub type MatrixStateFn = Arc<dyn Fn(f64, &Segment<'_>) -> DMatrix<f64> + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;
/// Writes the initial history at `θ <= 0` into the row slice.
pub type HistoryFn = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

/// A map `(t, z_t) ↦ state`, used for the drift, diagonal diffusions and impulses.
#[derive(Clone)]
pub enum Functional {
    Zero,
    /// `scale · ∫_{-∞}^0 e^(rate·θ) z(t+θ) dθ`, mode by mode, over the stored past.
    ExpMemory { rate: f64, scale: f64 },
    Custom(StateFn),
}

impl fmt::Debug for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Functional::Zero => write!(f, "Zero"),
            Functional::ExpMemory { rate, scale } => {
                write!(f, "ExpMemory {{ rate: {rate}, scale: {scale} }}")
            }
            Functional::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Functional {
    pub fn is_zero(&self) -> bool {
        matches!(self, Functional::Zero)
    }

    /// Memory integral at node `k` (trapezoid recursion from the first stored node).
    fn memory_at(rate: f64, path: &Path, k: usize) -> Vec<f64> {
        let m = path.modes();
        let dt = path.dt();
        let decay = (-rate * dt).exp();
        let mut acc = vec![0.0; m];
        for j in 1..=k {
            let (prev, cur) = (path.row(j - 1), path.row(j));
            for n in 0..m {
                acc[n] = decay * acc[n] + 0.5 * dt * (cur[n] + decay * prev[n]);
            }
        }
        acc
    }

    /// Values at nodes `lo..=hi`, written row-major into `out`.
    pub fn eval_range(&self, path: &Path, lo: usize, hi: usize, out: &mut Vec<f64>) {
        let m = path.modes();
        out.clear();
        match self {
            Functional::Zero => out.resize((hi - lo + 1) * m, 0.0),
            Functional::ExpMemory { rate, scale } => {
                let dt = path.dt();
                let decay = (-rate * dt).exp();
                let mut acc = Self::memory_at(*rate, path, lo);
                out.extend(acc.iter().map(|v| scale * v));
                for j in lo + 1..=hi {
                    let (prev, cur) = (path.row(j - 1), path.row(j));
                    for n in 0..m {
                        acc[n] = decay * acc[n] + 0.5 * dt * (cur[n] + decay * prev[n]);
                    }
                    out.extend(acc.iter().map(|v| scale * v));
                }
            }
            Functional::Custom(f) => {
                for j in lo..=hi {
                    let seg = path.segment_at(j);
                    let v = f(seg.time(), &seg);
                    debug_assert_eq!(v.len(), m);
                    out.extend(v.iter());
                }
            }
        }
    }

    /// Value at node `k` given the memory integral at `k - 1` (ignored unless
    /// the functional is an exponential memory).
    fn eval_next(&self, path: &Path, k: usize, prev_memory: &[f64]) -> DVector<f64> {
        let m = path.modes();
        match self {
            Functional::Zero => DVector::zeros(m),
            Functional::ExpMemory { rate, scale } => {
                let dt = path.dt();
                let decay = (-rate * dt).exp();
                let (prev, cur) = (path.row(k - 1), path.row(k));
                DVector::from_fn(m, |n, _| {
                    scale * (decay * prev_memory[n] + 0.5 * dt * (cur[n] + decay * prev[n]))
                })
            }
            Functional::Custom(f) => {
                let seg = path.segment_at(k);
                f(seg.time(), &seg)
            }
        }
    }

    /// Value at an arbitrary node, recomputing any memory from scratch.
    pub fn eval_at(&self, path: &Path, k: usize) -> DVector<f64> {
        let mut out = Vec::new();
        self.eval_range(path, k, k, &mut out);
        DVector::from_vec(out)
    }
}

/// Noise intensity `G(t, z_t)` multiplying `dW`.
#[derive(Clone)]
pub enum Diffusion {
    Zero,
    /// Mode `n` of the state is driven by mode `n` of the Wiener noise with
    /// amplitude given by the functional.
    Diagonal(Functional),
    /// Full `modes × noise_dim` matrix.
    Custom(MatrixStateFn),
}

impl fmt::Debug for Diffusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diffusion::Zero => write!(f, "Zero"),
            Diffusion::Diagonal(g) => write!(f, "Diagonal({g:?})"),
            Diffusion::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Diffusion {
    pub fn is_zero(&self) -> bool {
        matches!(self, Diffusion::Zero | Diffusion::Diagonal(Functional::Zero))
    }
}

/// Deterministic intensity `σ(t)` multiplying `dB^H`.
#[derive(Clone)]
pub enum Sigma {
    Zero,
    ConstantDiagonal(Vec<f64>),
    Custom(MatrixFn),
}

impl fmt::Debug for Sigma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sigma::Zero => write!(f, "Zero"),
            Sigma::ConstantDiagonal(s) => write!(f, "ConstantDiagonal({s:?})"),
            Sigma::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Sigma {
    pub fn is_zero(&self) -> bool {
        match self {
            Sigma::Zero => true,
            Sigma::ConstantDiagonal(s) => s.iter().all(|&v| v == 0.0),
            Sigma::Custom(_) => false,
        }
    }

    /// `‖σ(t) Q^{1/2}‖²_HS`.
    pub fn hs_norm_sq(&self, t: f64, q: &QStructure) -> f64 {
        match self {
            Sigma::Zero => 0.0,
            Sigma::ConstantDiagonal(s) => {
                s.iter().zip(q.eigenvalues()).map(|(v, l)| v * v * l).sum()
            }
            Sigma::Custom(f) => {
                let mat = f(t);
                let mut acc = 0.0;
                for (i, l) in q.eigenvalues().iter().enumerate().take(mat.ncols()) {
                    acc += mat.column(i).norm_squared() * l;
                }
                acc
            }
        }
    }
}

/// `0 = t_0 = s_0 < t_1 < s_1 < … < t_m < s_m < t_{m+1} = T` on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimePartition {
    points: Vec<f64>,
    dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalKind {
    Flow,
    Impulse,
}

impl IntervalKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            IntervalKind::Flow => "flow",
            IntervalKind::Impulse => "impulse",
        }
    }
}

impl TimePartition {
    /// `points = [0, t_1, s_1, …, t_m, s_m, T]`; every point must be a
    /// multiple of `dt`.
    pub fn new(points: Vec<f64>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::domain("time step must be positive"));
        }
        if points.len() < 2 || points.len() % 2 != 0 {
            return Err(Error::domain(
                "partition must list 0, then pairs t_i, s_i, then T",
            ));
        }
        if points[0] != 0.0 {
            return Err(Error::domain("partition must start at 0"));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("partition points must be strictly increasing"));
        }
        for &p in &points {
            let x = p / dt;
            if (x - x.round()).abs() > 1e-6 {
                return Err(Error::domain(format!("partition point {p} is not a multiple of dt")));
            }
        }
        Ok(Self { points, dt })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of impulse intervals `m`.
    pub fn impulses(&self) -> usize {
        self.points.len() / 2 - 1
    }

    pub fn horizon(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// `t_i` for `i = 0..=m+1`.
    pub fn t(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.points[2 * i - 1]
        }
    }

    /// `s_i` for `i = 0..=m`.
    pub fn s(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.points[2 * i]
        }
    }

    /// Flow end points `t_1, …, t_{m+1}`.
    pub fn flow_ends(&self) -> Vec<f64> {
        (1..=self.impulses() + 1).map(|i| self.t(i)).collect()
    }

    pub fn steps(&self, a: f64, b: f64) -> usize {
        ((b - a) / self.dt).round() as usize
    }

    pub fn kind_at(&self, t: f64) -> IntervalKind {
        for i in 1..=self.impulses() {
            if t > self.t(i) + 1e-12 && t <= self.s(i) + 1e-12 {
                return IntervalKind::Impulse;
            }
        }
        IntervalKind::Flow
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Tolerance on the squared sup distance of successive Picard iterates.
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub rule: ProductRule,
    /// Fixed-point tolerance for each node of an impulse sweep.
    pub impulse_tol: f64,
    pub impulse_max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            picard_tol: 1e-10,
            picard_max_iter: 60,
            rule: ProductRule::LeftRectangle,
            impulse_tol: 1e-28,
            impulse_max_iter: 200,
        }
    }
}

/// A complete instance of the impulsive fractional delay problem.
#[derive(Clone)]
pub struct ProblemSpec {
    pub q: f64,
    pub operator: SpectralOperator,
    pub partition: TimePartition,
    pub drift: Functional,
    pub diffusion: Diffusion,
    pub sigma: Sigma,
    /// `K_1, …, K_m`.
    pub impulses: Vec<Functional>,
    pub history: HistoryFn,
    /// Lag window of the history space.
    pub tau_max: f64,
    pub weight: WeightFunction,
    pub wiener_q: QStructure,
    pub fbm_q: QStructure,
    pub hurst: f64,
    pub constants: Option<DeclaredConstants>,
    pub options: SolverOptions,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("q", &self.q)
            .field("operator", &self.operator)
            .field("partition", &self.partition)
            .field("drift", &self.drift)
            .field("diffusion", &self.diffusion)
            .field("sigma", &self.sigma)
            .field("impulses", &self.impulses)
            .field("tau_max", &self.tau_max)
            .field("hurst", &self.hurst)
            .field("constants", &self.constants)
            .finish()
    }
}

impl ProblemSpec {
    pub fn modes(&self) -> usize {
        self.operator.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.5 && self.q < 1.0) {
            return Err(Error::domain(format!("q = {} must lie in (1/2, 1)", self.q)));
        }
        let m = self.partition.impulses();
        if self.impulses.len() != m {
            return Err(Error::domain(format!(
                "partition has {m} impulse intervals but {} impulse maps were given",
                self.impulses.len()
            )));
        }
        if !(self.tau_max >= self.partition.dt()) {
            return Err(Error::domain("tau_max must cover at least one step"));
        }
        let modes = self.modes();
        let mut origin = vec![0.0; modes];
        (self.history)(0.0, &mut origin);
        if origin.iter().any(|&v| v != 0.0) {
            return Err(Error::domain("initial history must vanish at 0"));
        }
        if matches!(self.diffusion, Diffusion::Diagonal(_)) && self.wiener_q.dim() != modes {
            return Err(Error::domain("diagonal diffusion needs one Wiener mode per state mode"));
        }
        if let Sigma::ConstantDiagonal(s) = &self.sigma {
            if s.len() != modes || self.fbm_q.dim() != modes {
                return Err(Error::domain("diagonal sigma needs one fBm mode per state mode"));
            }
        }
        if !self.sigma.is_zero() && !(self.hurst >= 0.5 && self.hurst < 1.0) {
            return Err(Error::domain("Hurst index must lie in [1/2, 1)"));
        }
        if let Some(c) = &self.constants {
            c.validate(m)?;
            let horizon = self.partition.horizon();
            for j in 0..=64 {
                let t = horizon * j as f64 / 64.0;
                let s = self.sigma.hs_norm_sq(t, &self.fbm_q);
                if s > c.lambda_sigma * (1.0 + 1e-12) + 1e-300 {
                    return Err(Error::domain(format!(
                        "sigma bound violated at t = {t}: {s} > {}",
                        c.lambda_sigma
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_stochastic(&self) -> bool {
        !self.diffusion.is_zero() || !self.sigma.is_zero()
    }

    /// Initial history sampled on the lag grid.
    pub fn initial_buffer(&self) -> Result<HistoryBuffer> {
        let modes = self.modes();
        HistoryBuffer::initial(self.tau_max, self.partition.dt(), |theta| {
            let mut row = vec![0.0; modes];
            (self.history)(theta, &mut row);
            DVector::from_vec(row)
        })
    }

    pub fn phi_norm(&self) -> Result<f64> {
        Ok(dh_norm(&self.initial_buffer()?, &self.weight))
    }

    /// Propagator bounds over the horizon of the partition.
    pub fn bounds(&self) -> Result<PropagatorBounds> {
        operator_bounds(self.q, &self.operator, self.partition.horizon())
    }

    /// Storage with the history filled on `[-(tau_max + T), 0]`.
    pub fn new_path(&self) -> Result<Path> {
        let horizon = self.partition.horizon();
        let history = self.history.clone();
        Path::with_history(
            self.partition.dt(),
            self.modes(),
            self.tau_max + horizon,
            horizon,
            move |t, row| history(t, row),
        )
    }
}

/// Evaluates the constants ledger; fails when no constants were declared.
pub fn ledger_evaluate(problem: &ProblemSpec, bounds: &PropagatorBounds, r: f64) -> Result<ConstantsLedger> {
    let constants = problem
        .constants
        .clone()
        .ok_or_else(|| Error::domain("no declared constants: ledger unverified"))?;
    evaluate_ledger(&LedgerInputs {
        q: problem.q,
        hurst: problem.hurst,
        t_ends: problem.partition.flow_ends(),
        m1: bounds.m1,
        m2: bounds.m2,
        varpi: problem.weight.varpi(),
        phi_norm: problem.phi_norm()?,
        r,
        constants,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalReport {
    pub kind: IntervalKind,
    /// `i` of `(s_i, t_{i+1}]` or `(t_i, s_i]`.
    pub index: usize,
    pub iterations: usize,
    /// Squared sup distances of successive iterates (flow) or the largest
    /// per-node residual (impulse).
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub path: Path,
    pub partition: TimePartition,
    pub reports: Vec<IntervalReport>,
    pub seed: u64,
    /// History-norm inequality at every partition point.
    pub embedding_holds: bool,
}

impl Trajectory {
    pub fn value(&self, t: f64) -> Result<DVector<f64>> {
        Ok(self.path.state(self.path.index_of(t)?))
    }

    pub fn terminal(&self) -> DVector<f64> {
        self.path.state(self.path.last_index())
    }
}

/// Adjusts each new Picard iterate of a flow interval before it is accepted.
/// `rows` holds nodes `start + 1 ..= end` row-major.
pub trait FlowHook {
    fn adjust(&mut self, interval: usize, start: usize, rows: &mut [f64]) -> Result<()>;
}

struct NoHook;

impl FlowHook for NoHook {
    fn adjust(&mut self, _: usize, _: usize, _: &mut [f64]) -> Result<()> {
        Ok(())
    }
}

/// Problem plus precomputed propagator tables, reusable across replicates.
#[derive(Clone)]
pub struct Simulator {
    problem: ProblemSpec,
    kernels: Vec<ModeKernel>,
    noise: Option<NoiseGenerator>,
    noise_grid: Vec<f64>,
}

impl fmt::Debug for Simulator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Simulator").field("problem", &self.problem).finish()
    }
}

impl Simulator {
    pub fn new(problem: ProblemSpec) -> Result<Self> {
        problem.validate()?;
        let part = &problem.partition;
        let steps = part.steps(0.0, part.horizon());
        let dt = part.dt();
        let kernels = problem
            .operator
            .eigenvalues()
            .iter()
            .map(|&l| ModeKernel::new(problem.q, l, dt, steps))
            .collect::<Result<Vec<_>>>()?;
        let noise_grid: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
        let noise = if problem.is_stochastic() {
            Some(NoiseGenerator::new(
                noise_grid.clone(),
                problem.wiener_q.dim(),
                problem.fbm_q.dim(),
                if problem.sigma.is_zero() { 0.75 } else { problem.hurst },
                FbmMethod::Cholesky,
            )?)
        } else {
            None
        };
        Ok(Self {
            problem,
            kernels,
            noise,
            noise_grid,
        })
    }

    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    pub fn kernels(&self) -> &[ModeKernel] {
        &self.kernels
    }

    /// Noise realization `replicate` of the ensemble rooted at `base_seed`;
    /// all zero for deterministic problems.
    pub fn noise(&self, base_seed: u64, replicate: u64) -> NoiseRealization {
        match &self.noise {
            Some(g) => g.realize(base_seed, replicate),
            None => NoiseRealization::zeros(
                self.noise_grid.clone(),
                self.problem.wiener_q.dim(),
                self.problem.fbm_q.dim(),
            ),
        }
    }

    pub fn run(&self, base_seed: u64, replicate: u64) -> Result<Trajectory> {
        self.simulate(&self.noise(base_seed, replicate))
    }

    pub fn simulate(&self, noise: &NoiseRealization) -> Result<Trajectory> {
        self.simulate_with(noise, &mut NoHook)
    }

    pub fn simulate_with(&self, noise: &NoiseRealization, hook: &mut dyn FlowHook) -> Result<Trajectory> {
        if noise.grid.len() != self.noise_grid.len() {
            return Err(Error::domain("noise realization does not match the time grid"));
        }
        let mut path = self.problem.new_path()?;
        let m = self.problem.partition.impulses();
        let mut reports = Vec::with_capacity(2 * m + 1);
        for i in 0..=m {
            if i >= 1 {
                reports.push(self.impulse_sweep(&mut path, i)?);
            }
            reports.push(self.solve_flow(&mut path, i, noise, hook)?);
        }
        let mut embedding_holds = true;
        for &t in self.problem.partition.points() {
            let check = embedding_check(&path, t, &self.problem.weight, self.problem.tau_max)?;
            if !check.holds {
                log::warn!("history-norm inequality fails at t = {t}: {} > {}", check.lhs, check.rhs);
                embedding_holds = false;
            }
        }
        Ok(Trajectory {
            path,
            partition: self.problem.partition.clone(),
            reports,
            seed: noise.seed,
            embedding_holds,
        })
    }

    /// Path row of time `t`.
    fn node(&self, path: &Path, t: f64) -> usize {
        path.origin() + self.problem.partition.steps(0.0, t)
    }

    /// `σ(t_j) Q^{1/2} ΔB^H_j` for steps `j` of the path in `a..b`.
    fn sigma_increments(&self, path: &Path, a: usize, b: usize, noise: &NoiseRealization) -> Vec<f64> {
        let modes = path.modes();
        let mut out = vec![0.0; (b - a) * modes];
        let sq: Vec<f64> = self.problem.fbm_q.eigenvalues().iter().map(|l| l.sqrt()).collect();
        for j in a..b {
            let step = j - path.origin();
            let row = &mut out[(j - a) * modes..(j - a + 1) * modes];
            match &self.problem.sigma {
                Sigma::Zero => {}
                Sigma::ConstantDiagonal(s) => {
                    for n in 0..modes {
                        row[n] = s[n] * sq[n] * noise.fbm_increment(step, n);
                    }
                }
                Sigma::Custom(f) => {
                    let mat = f(path.time(j));
                    let db = DVector::from_fn(mat.ncols(), |i, _| sq[i] * noise.fbm_increment(step, i));
                    let v = mat * db;
                    row.copy_from_slice(v.as_slice());
                }
            }
        }
        out
    }

    /// `G(t_j, z_{t_j}) Q^{1/2} ΔW_j` for steps `a..b`.
    fn diffusion_increments(
        &self,
        path: &Path,
        a: usize,
        b: usize,
        noise: &NoiseRealization,
        scratch: &mut Vec<f64>,
        out: &mut Vec<f64>,
    ) {
        let modes = path.modes();
        out.clear();
        out.resize((b - a) * modes, 0.0);
        let sq: Vec<f64> = self.problem.wiener_q.eigenvalues().iter().map(|l| l.sqrt()).collect();
        match &self.problem.diffusion {
            Diffusion::Zero => {}
            Diffusion::Diagonal(g) => {
                if g.is_zero() {
                    return;
                }
                g.eval_range(path, a, b - 1, scratch);
                for j in a..b {
                    let step = j - path.origin();
                    for n in 0..modes {
                        let idx = (j - a) * modes + n;
                        out[idx] = scratch[idx] * sq[n] * noise.wiener_increment(step, n);
                    }
                }
            }
            Diffusion::Custom(f) => {
                for j in a..b {
                    let step = j - path.origin();
                    let seg = path.segment_at(j);
                    let mat = f(seg.time(), &seg);
                    let dw = DVector::from_fn(mat.ncols(), |i, _| sq[i] * noise.wiener_increment(step, i));
                    let v = mat * dw;
                    out[(j - a) * modes..(j - a + 1) * modes].copy_from_slice(v.as_slice());
                }
            }
        }
    }

    /// Part of the flow value that does not depend on the iterate:
    /// `T_q(t - s_i) K_i(s_i, z_{s_i}) + ∫ S_q σ dB^H` at nodes `a+1..=b`.
    fn frozen_part(&self, path: &Path, i: usize, a: usize, b: usize, noise: &NoiseRealization) -> Vec<f64> {
        let modes = path.modes();
        let mut base = vec![0.0; (b - a) * modes];
        if i >= 1 {
            let start = path.row(a).to_vec();
            for k in a + 1..=b {
                for n in 0..modes {
                    base[(k - a - 1) * modes + n] = self.kernels[n].relax[k - a] * start[n];
                }
            }
        }
        if !self.problem.sigma.is_zero() {
            let sig = self.sigma_increments(path, a, b, noise);
            for k in a + 1..=b {
                for n in 0..modes {
                    let cell = &self.kernels[n].cell;
                    let mut acc = 0.0;
                    for j in a..k {
                        acc += cell[k - j] * sig[(j - a) * modes + n];
                    }
                    base[(k - a - 1) * modes + n] += acc;
                }
            }
        }
        base
    }

    /// Picard iteration for the flow interval `(s_i, t_{i+1}]`.
    pub fn solve_flow(
        &self,
        path: &mut Path,
        i: usize,
        noise: &NoiseRealization,
        hook: &mut dyn FlowHook,
    ) -> Result<IntervalReport> {
        let part = &self.problem.partition;
        let a = self.node(path, part.s(i));
        let b = self.node(path, part.t(i + 1));
        let modes = path.modes();
        let opts = &self.problem.options;
        let base = self.frozen_part(path, i, a, b, noise);

        // Initial iterate: the frozen part alone.
        let mut next = base.clone();
        hook.adjust(i, a, &mut next)?;
        for k in a + 1..=b {
            path.row_mut(k).copy_from_slice(&next[(k - a - 1) * modes..(k - a) * modes]);
        }

        let stochastic = !self.problem.diffusion.is_zero();
        let (mut f, mut xi, mut scratch) = (Vec::new(), Vec::new(), Vec::new());
        let mut residuals = Vec::new();
        for _ in 0..opts.picard_max_iter {
            self.problem.drift.eval_range(path, a, b, &mut f);
            if stochastic {
                self.diffusion_increments(path, a, b, noise, &mut scratch, &mut xi);
            }
            for k in a + 1..=b {
                for n in 0..modes {
                    let kern = &self.kernels[n];
                    let mut acc = base[(k - a - 1) * modes + n];
                    match opts.rule {
                        ProductRule::LeftRectangle => {
                            for j in a..k {
                                acc += kern.left_weight(k - j) * f[(j - a) * modes + n];
                            }
                        }
                        ProductRule::Trapezoidal => {
                            for j in a..k {
                                let l = k - j;
                                acc += kern.far[l] * f[(j - a) * modes + n]
                                    + kern.near[l] * f[(j + 1 - a) * modes + n];
                            }
                        }
                    }
                    if stochastic {
                        for j in a..k {
                            acc += kern.cell[k - j] * xi[(j - a) * modes + n];
                        }
                    }
                    next[(k - a - 1) * modes + n] = acc;
                }
            }
            hook.adjust(i, a, &mut next)?;
            let mut dist: f64 = 0.0;
            for k in a + 1..=b {
                let row = path.row_mut(k);
                let new = &next[(k - a - 1) * modes..(k - a) * modes];
                let d: f64 = row.iter().zip(new).map(|(o, v)| (v - o) * (v - o)).sum();
                dist = dist.max(d);
                row.copy_from_slice(new);
            }
            if !dist.is_finite() {
                return Err(Error::numeric(format!("Picard iterate diverged on flow interval {i}")));
            }
            residuals.push(dist);
            if dist <= opts.picard_tol {
                return Ok(IntervalReport {
                    kind: IntervalKind::Flow,
                    index: i,
                    iterations: residuals.len(),
                    residuals,
                });
            }
        }
        Err(Error::Convergence { residuals })
    }

    /// Node range `(a, b)` of the flow interval `(s_i, t_{i+1}]` in `path`.
    pub fn flow_nodes(&self, path: &Path, i: usize) -> (usize, usize) {
        let part = &self.problem.partition;
        (self.node(path, part.s(i)), self.node(path, part.t(i + 1)))
    }

    /// Right-hand side of the mild equation at `t_{i+1}` evaluated on the
    /// stored path, without any control contribution.
    pub fn flow_map_terminal(&self, path: &Path, i: usize, noise: &NoiseRealization) -> Result<DVector<f64>> {
        if i > self.problem.partition.impulses() {
            return Err(Error::domain(format!("no flow interval {i}")));
        }
        let (a, b) = self.flow_nodes(path, i);
        let modes = path.modes();
        let base = self.frozen_part(path, i, a, b, noise);
        let mut f = Vec::new();
        self.problem.drift.eval_range(path, a, b, &mut f);
        let mut xi = Vec::new();
        if !self.problem.diffusion.is_zero() {
            let mut scratch = Vec::new();
            self.diffusion_increments(path, a, b, noise, &mut scratch, &mut xi);
        }
        let mut out = DVector::zeros(modes);
        for n in 0..modes {
            let kern = &self.kernels[n];
            let mut acc = base[(b - a - 1) * modes + n];
            for j in a..b {
                let l = b - j;
                acc += match self.problem.options.rule {
                    ProductRule::LeftRectangle => kern.left_weight(l) * f[(j - a) * modes + n],
                    ProductRule::Trapezoidal => {
                        kern.far[l] * f[(j - a) * modes + n] + kern.near[l] * f[(j + 1 - a) * modes + n]
                    }
                };
                if !xi.is_empty() {
                    acc += kern.cell[l] * xi[(j - a) * modes + n];
                }
            }
            out[n] = acc;
        }
        Ok(out)
    }

    /// Impulse value `K_i(t_k, z_{t_k})` at node `k`, solving the implicit
    /// dependence on `z(t_k)` by fixed-point iteration. Nodes before `k` must
    /// be final.
    pub fn apply_impulse(&self, path: &mut Path, i: usize, k: usize) -> Result<DVector<f64>> {
        let part = &self.problem.partition;
        if i == 0 || i > part.impulses() {
            return Err(Error::domain(format!("no impulse interval {i}")));
        }
        let t = path.time(k);
        if !(t > part.t(i) + 1e-12 && t <= part.s(i) + 1e-12) {
            return Err(Error::domain(format!("t = {t} outside (t_{i}, s_{i}]")));
        }
        let func = &self.problem.impulses[i - 1];
        let memory = match func {
            Functional::ExpMemory { rate, .. } => Functional::memory_at(*rate, path, k - 1),
            _ => Vec::new(),
        };
        self.impulse_fixed_point(path, func, k, &memory).map(|(v, _)| v)
    }

    fn impulse_fixed_point(
        &self,
        path: &mut Path,
        func: &Functional,
        k: usize,
        memory: &[f64],
    ) -> Result<(DVector<f64>, f64)> {
        let opts = &self.problem.options;
        let prev = path.row(k - 1).to_vec();
        path.row_mut(k).copy_from_slice(&prev);
        let mut residuals = Vec::new();
        for _ in 0..opts.impulse_max_iter {
            let v = func.eval_next(path, k, memory);
            let row = path.row_mut(k);
            let d: f64 = row.iter().zip(v.iter()).map(|(o, n)| (n - o) * (n - o)).sum();
            row.copy_from_slice(v.as_slice());
            residuals.push(d);
            if d <= opts.impulse_tol || d == 0.0 {
                return Ok((v, d));
            }
        }
        Err(Error::Convergence { residuals })
    }

    /// Forward sweep through the impulse interval `(t_i, s_i]`.
    fn impulse_sweep(&self, path: &mut Path, i: usize) -> Result<IntervalReport> {
        let part = &self.problem.partition;
        let a = self.node(path, part.t(i));
        let b = self.node(path, part.s(i));
        let func = &self.problem.impulses[i - 1];
        let dt = path.dt();
        let mut memory = match func {
            Functional::ExpMemory { rate, .. } => Functional::memory_at(*rate, path, a),
            _ => Vec::new(),
        };
        let mut worst: f64 = 0.0;
        for k in a + 1..=b {
            let (_, d) = self.impulse_fixed_point(path, func, k, &memory)?;
            worst = worst.max(d);
            if let Functional::ExpMemory { rate, .. } = func {
                let decay = (-rate * dt).exp();
                let (p, c) = (path.row(k - 1), path.row(k));
                for n in 0..memory.len() {
                    memory[n] = decay * memory[n] + 0.5 * dt * (c[n] + decay * p[n]);
                }
            }
        }
        Ok(IntervalReport {
            kind: IntervalKind::Impulse,
            index: i,
            iterations: b - a,
            residuals: vec![worst],
        })
    }
}

/// One trajectory of `problem` driven by replicate 0 of the noise rooted at `seed`.
pub fn simulate(problem: &ProblemSpec, seed: u64) -> Result<Trajectory> {
    let sim = Simulator::new(problem.clone())?;
    if problem.constants.is_some() {
        let ledger = ledger_evaluate(problem, &problem.bounds()?, 1.0)?;
        if !ledger.contraction_holds() {
            log::warn!("L_R = {} >= 1: uniqueness is not guaranteed", ledger.l_r);
        }
    }
    sim.run(seed, 0)
}
