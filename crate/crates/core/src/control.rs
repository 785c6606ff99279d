//! Regularized-Gramian steering of the actuated system.
//!
//! On every flow interval `(s_i, t_{i+1}]` the control
//! `û(t) = 𝒜* S_q*(t_{i+1} - t) (ΛI + Γ)⁻¹ p(z)` is applied, with `p` the gap
//! between the target and the uncontrolled mild map at `t_{i+1}`. The control
//! and the trajectory are resolved jointly inside the Picard loop, so at
//! convergence `z(t_{i+1}) = target - Λ(ΛI + Γ)⁻¹ p(z)` holds on the grid.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mittag_leffler::{propagator_s, scaled_propagator_s, SpectralOperator};
use crate::noise::NoiseRealization;
use crate::solver::{FlowHook, ProblemSpec, Simulator, Trajectory};
use crate::special::GaussLegendre;

/// Bounded map `𝒜` from the control space into the mode space, stored as a
/// `modes × control_dim` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Actuator {
    matrix: DMatrix<f64>,
}

impl Actuator {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::domain("actuator must have at least one row and column"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("actuator entries must be finite"));
        }
        Ok(Self { matrix })
    }

    pub fn identity(modes: usize) -> Self {
        Self {
            matrix: DMatrix::identity(modes, modes),
        }
    }

    pub fn diagonal(gains: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(gains)))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn adjoint(&self) -> DMatrix<f64> {
        self.matrix.transpose()
    }

    pub fn state_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.matrix * u
    }

    pub fn apply_adjoint(&self, z: &DVector<f64>) -> DVector<f64> {
        self.matrix.tr_mul(z)
    }

    fn outer(&self) -> DMatrix<f64> {
        &self.matrix * self.matrix.transpose()
    }
}

/// Gramian `Γ = ∫_s^t S_q(t-e) 𝒜𝒜* S_q*(t-e) de` of one flow interval.
#[derive(Debug, Clone, PartialEq)]
pub struct GramianOp {
    pub start: f64,
    pub end: f64,
    pub matrix: DMatrix<f64>,
    /// Width of the quadrature panels in the substituted variable.
    pub step: f64,
}

impl GramianOp {
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

const GRAMIAN_RULE: usize = 16;

/// Assembles `Γ` on `(s, t]` with `steps` Gauss-Legendre panels.
///
/// With `v = u^(2q-1)` the square singularity `u^(2q-2)` of the integrand
/// becomes the constant `1/(2q-1)`, leaving only Mittag-Leffler factors.
pub fn gramian(
    q: f64,
    spec: &SpectralOperator,
    actuator: &Actuator,
    s: f64,
    t: f64,
    steps: usize,
) -> Result<GramianOp> {
    if !(q > 0.5 && q < 1.0) {
        return Err(Error::domain(format!("q = {q} must lie in (1/2, 1) for a finite Gramian")));
    }
    if !(s < t) {
        return Err(Error::domain("Gramian interval must satisfy s < t"));
    }
    if steps == 0 {
        return Err(Error::domain("Gramian needs at least one panel"));
    }
    let modes = spec.dim();
    if actuator.state_dim() != modes {
        return Err(Error::domain("actuator rows must match the number of modes"));
    }
    let outer = actuator.outer();
    let p = 2.0 * q - 1.0;
    let v_end = (t - s).powf(p);
    let h = v_end / steps as f64;
    let rule = GaussLegendre::new(GRAMIAN_RULE);

    let (mut nodes, mut weights) = (Vec::new(), Vec::new());
    for panel in 0..steps {
        let lo = h * panel as f64;
        for (v, w) in rule.mapped(lo, lo + h) {
            nodes.push(v);
            weights.push(w / p);
        }
    }
    let mut factors = DMatrix::zeros(modes, nodes.len());
    for (c, &v) in nodes.iter().enumerate() {
        let u = v.powf(1.0 / p);
        for (n, &lambda) in spec.eigenvalues().iter().enumerate() {
            factors[(n, c)] = scaled_propagator_s(q, lambda, u)?;
        }
    }
    let mut matrix = DMatrix::zeros(modes, modes);
    for n in 0..modes {
        for m in n..modes {
            if outer[(n, m)] == 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for c in 0..nodes.len() {
                acc += weights[c] * factors[(n, c)] * factors[(m, c)];
            }
            matrix[(n, m)] = outer[(n, m)] * acc;
            matrix[(m, n)] = matrix[(n, m)];
        }
    }
    let gram = GramianOp {
        start: s,
        end: t,
        matrix,
        step: h,
    };
    let floor = gram.min_eigenvalue();
    if floor < -1e-10 {
        return Err(Error::numeric(format!("Gramian not positive semidefinite: eigenvalue {floor}")));
    }
    Ok(gram)
}

/// `Δ(Λ, Γ) = (ΛI + Γ)⁻¹` by Cholesky factorization.
pub fn resolvent_delta(lambda_reg: f64, gram: &GramianOp) -> Result<DMatrix<f64>> {
    if !(lambda_reg > 0.0) || !lambda_reg.is_finite() {
        return Err(Error::domain("regularization Λ must be positive"));
    }
    let n = gram.dim();
    let shifted = &gram.matrix + DMatrix::identity(n, n) * lambda_reg;
    let chol = shifted
        .cholesky()
        .ok_or_else(|| Error::numeric("Cholesky factorization of ΛI + Γ failed"))?;
    Ok(chol.inverse())
}

/// `û(t) = 𝒜* S_q*(t_{i+1} - t) Δ(Λ, Γ) p` for `t` inside the interval of `gram`.
pub fn control_law(
    t: f64,
    lambda_reg: f64,
    gram: &GramianOp,
    p: &DVector<f64>,
    q: f64,
    spec: &SpectralOperator,
    actuator: &Actuator,
) -> Result<DVector<f64>> {
    if !(t >= gram.start && t < gram.end) {
        return Err(Error::domain(format!(
            "control time {t} outside [{}, {})",
            gram.start, gram.end
        )));
    }
    let v = resolvent_delta(lambda_reg, gram)? * p;
    let lag = gram.end - t;
    let mut w = DVector::zeros(spec.dim());
    for (n, &lambda) in spec.eigenvalues().iter().enumerate() {
        w[n] = propagator_s(q, lambda, lag)? * v[n];
    }
    Ok(actuator.apply_adjoint(&w))
}

/// `p(z) = z_{t_{i+1}} - [uncontrolled mild map at t_{i+1}]` on the stored trajectory.
pub fn residual_p(
    sim: &Simulator,
    i: usize,
    trajectory: &Trajectory,
    noise: &NoiseRealization,
    target: &DVector<f64>,
) -> Result<DVector<f64>> {
    if target.len() != sim.problem().modes() {
        return Err(Error::domain("target dimension does not match the modes"));
    }
    Ok(target - sim.flow_map_terminal(&trajectory.path, i, noise)?)
}

/// Terminal targets `z_{t_{i+1}}` for `i = 0..=m`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringTarget {
    targets: Vec<DVector<f64>>,
    final_only: bool,
}

impl SteeringTarget {
    pub fn new(targets: Vec<DVector<f64>>, final_only: bool) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::domain("need at least one target"));
        }
        let dim = targets[0].len();
        if targets.iter().any(|t| t.len() != dim || t.iter().any(|v| !v.is_finite())) {
            return Err(Error::domain("targets must be finite and share one dimension"));
        }
        Ok(Self { targets, final_only })
    }

    /// The same target at every interval end.
    pub fn uniform(target: DVector<f64>, intervals: usize, final_only: bool) -> Result<Self> {
        Self::new(vec![target; intervals], final_only)
    }

    pub fn intervals(&self) -> usize {
        self.targets.len()
    }

    pub fn dim(&self) -> usize {
        self.targets[0].len()
    }

    pub fn target(&self, i: usize) -> &DVector<f64> {
        &self.targets[i]
    }

    pub fn final_target(&self) -> &DVector<f64> {
        &self.targets[self.targets.len() - 1]
    }

    pub fn final_only(&self) -> bool {
        self.final_only
    }

    pub fn is_active(&self, i: usize) -> bool {
        !self.final_only || i + 1 == self.targets.len()
    }
}

#[derive(Debug, Clone)]
struct IntervalPlan {
    gram: GramianOp,
    /// Response at node `a + 1 + r` to the unit vector `Δp`.
    reach: Vec<DMatrix<f64>>,
}

/// Simulator with precomputed Gramians and control responses.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    sim: Simulator,
    actuator: Actuator,
    target: SteeringTarget,
    plans: Vec<Option<IntervalPlan>>,
}

/// One controlled trajectory.
#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    pub lambda: f64,
    pub trajectory: Trajectory,
    /// `‖z(t_{i+1}) - z_{t_{i+1}}‖²` for steered intervals.
    pub terminal_errors: Vec<Option<f64>>,
    /// `p(z^Λ)` at convergence for steered intervals.
    pub residuals: Vec<Option<DVector<f64>>>,
}

struct SteeringHook<'a> {
    cl: &'a ClosedLoop,
    deltas: &'a [Option<DMatrix<f64>>],
    p: Vec<Option<DVector<f64>>>,
}

impl FlowHook for SteeringHook<'_> {
    fn adjust(&mut self, interval: usize, _start: usize, rows: &mut [f64]) -> Result<()> {
        let (Some(plan), Some(delta)) = (&self.cl.plans[interval], &self.deltas[interval]) else {
            return Ok(());
        };
        let modes = self.cl.target.dim();
        let len = rows.len() / modes;
        let reached = DVector::from_column_slice(&rows[(len - 1) * modes..]);
        let p = self.cl.target.target(interval) - reached;
        let v = delta * &p;
        for (r, reach) in plan.reach.iter().enumerate() {
            let add = reach * &v;
            for (x, a) in rows[r * modes..(r + 1) * modes].iter_mut().zip(add.iter()) {
                *x += a;
            }
        }
        self.p[interval] = Some(p);
        Ok(())
    }
}

/// Gramian panels per unit of `v = u^(2q-1)`.
const GRAMIAN_PANELS: usize = 256;

impl ClosedLoop {
    pub fn new(sim: Simulator, actuator: Actuator, target: SteeringTarget) -> Result<Self> {
        let problem = sim.problem();
        let modes = problem.modes();
        let m = problem.partition.impulses();
        if actuator.state_dim() != modes || target.dim() != modes {
            return Err(Error::domain("actuator and targets must match the number of modes"));
        }
        if target.intervals() != m + 1 {
            return Err(Error::domain(format!(
                "expected {} targets, one per flow interval",
                m + 1
            )));
        }
        let q = problem.q;
        let dt = problem.partition.dt();
        let eig = problem.operator.eigenvalues().to_vec();
        let outer = actuator.outer();
        let mut plans = Vec::with_capacity(m + 1);
        for i in 0..=m {
            if !target.is_active(i) {
                plans.push(None);
                continue;
            }
            let (s, t) = (problem.partition.s(i), problem.partition.t(i + 1));
            let len = problem.partition.steps(s, t);
            let panels = ((GRAMIAN_PANELS as f64) * (t - s).powf(2.0 * q - 1.0)).ceil().max(16.0) as usize;
            let gram = gramian(q, &problem.operator, &actuator, s, t, panels)?;
            // S_m at the midpoint of the cell `l` steps behind t_{i+1}.
            let mut mid = DMatrix::zeros(modes, len + 1);
            for l in 1..=len {
                for (n, &lambda) in eig.iter().enumerate() {
                    mid[(n, l)] = propagator_s(q, lambda, (l as f64 - 0.5) * dt)?;
                }
            }
            let kernels = sim.kernels();
            let mut reach = Vec::with_capacity(len);
            for r in 0..len {
                let k = r + 1;
                if k == len {
                    reach.push(gram.matrix.clone());
                    break;
                }
                let mut c = DMatrix::zeros(modes, modes);
                for n in 0..modes {
                    for mm in 0..modes {
                        if outer[(n, mm)] == 0.0 {
                            continue;
                        }
                        let mut acc = 0.0;
                        for j in 0..k {
                            acc += kernels[n].left_weight(k - j) * mid[(mm, len - j)];
                        }
                        c[(n, mm)] = outer[(n, mm)] * acc;
                    }
                }
                reach.push(c);
            }
            plans.push(Some(IntervalPlan { gram, reach }));
        }
        Ok(Self {
            sim,
            actuator,
            target,
            plans,
        })
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn actuator(&self) -> &Actuator {
        &self.actuator
    }

    pub fn target(&self) -> &SteeringTarget {
        &self.target
    }

    pub fn gramian(&self, i: usize) -> Option<&GramianOp> {
        self.plans.get(i).and_then(|p| p.as_ref()).map(|p| &p.gram)
    }

    pub fn deltas(&self, lambda_reg: f64) -> Result<Vec<Option<DMatrix<f64>>>> {
        self.plans
            .iter()
            .map(|p| p.as_ref().map(|p| resolvent_delta(lambda_reg, &p.gram)).transpose())
            .collect()
    }

    pub fn simulate(&self, lambda_reg: f64, noise: &NoiseRealization) -> Result<ClosedLoopRun> {
        let deltas = self.deltas(lambda_reg)?;
        self.simulate_with(lambda_reg, &deltas, noise)
    }

    fn simulate_with(
        &self,
        lambda_reg: f64,
        deltas: &[Option<DMatrix<f64>>],
        noise: &NoiseRealization,
    ) -> Result<ClosedLoopRun> {
        let mut hook = SteeringHook {
            cl: self,
            deltas,
            p: vec![None; self.plans.len()],
        };
        let trajectory = self.sim.simulate_with(noise, &mut hook)?;
        let part = &self.sim.problem().partition;
        let terminal_errors = (0..self.plans.len())
            .map(|i| {
                if self.plans[i].is_none() {
                    return Ok(None);
                }
                let z = trajectory.value(part.t(i + 1))?;
                Ok(Some((z - self.target.target(i)).norm_squared()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClosedLoopRun {
            lambda: lambda_reg,
            trajectory,
            terminal_errors,
            residuals: hook.p,
        })
    }

    /// Λ-sweep with common random numbers: replicate `r` uses the same noise
    /// for every Λ.
    pub fn sweep(&self, lambdas: &[f64], replicates: usize, seed: u64) -> Result<SweepTable> {
        if lambdas.is_empty() || lambdas.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::domain("Λ values must be positive"));
        }
        if lambdas.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::domain("Λ values must be strictly decreasing"));
        }
        if replicates == 0 {
            return Err(Error::domain("need at least one replicate"));
        }
        let deltas = lambdas
            .iter()
            .map(|&l| self.deltas(l))
            .collect::<Result<Vec<_>>>()?;
        let per_rep: Vec<Result<Vec<Vec<Option<f64>>>>> = (0..replicates as u64)
            .into_par_iter()
            .map(|r| {
                let noise = self.sim.noise(seed, r);
                lambdas
                    .iter()
                    .zip(&deltas)
                    .map(|(&l, d)| self.simulate_with(l, d, &noise).map(|run| run.terminal_errors))
                    .collect()
            })
            .collect();
        let per_rep = per_rep.into_iter().collect::<Result<Vec<_>>>()?;
        let intervals: Vec<usize> = (0..self.plans.len()).filter(|&i| self.plans[i].is_some()).collect();
        let mut samples = Vec::new();
        for li in 0..lambdas.len() {
            let mut row = Vec::new();
            for &i in &intervals {
                row.push(per_rep.iter().map(|rep| rep[li][i].unwrap_or(f64::NAN)).collect::<Vec<f64>>());
            }
            samples.push(row);
        }
        Ok(SweepTable::from_samples(lambdas.to_vec(), intervals, samples))
    }
}

/// One line of the sweep output.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub interval_index: usize,
    pub mean_sq_error: f64,
    pub std_error: f64,
    pub replicates: usize,
}

/// Where the mean error stops decreasing significantly along the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseFloor {
    pub interval_index: usize,
    /// First Λ after which the paired decrease is below three standard errors.
    pub floor_lambda: Option<f64>,
    pub floor_error: Option<f64>,
    /// No significant increase anywhere in the sweep.
    pub monotone_to_floor: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub lambdas: Vec<f64>,
    pub intervals: Vec<usize>,
    pub rows: Vec<SweepRow>,
    /// `samples[λ][interval][replicate]` squared errors.
    pub samples: Vec<Vec<Vec<f64>>>,
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl SweepTable {
    fn from_samples(lambdas: Vec<f64>, intervals: Vec<usize>, samples: Vec<Vec<Vec<f64>>>) -> Self {
        let mut rows = Vec::new();
        for (li, &lambda) in lambdas.iter().enumerate() {
            for (ii, &interval_index) in intervals.iter().enumerate() {
                let (mean, se) = mean_se(&samples[li][ii]);
                rows.push(SweepRow {
                    lambda,
                    interval_index,
                    mean_sq_error: mean,
                    std_error: se,
                    replicates: samples[li][ii].len(),
                });
            }
        }
        Self {
            lambdas,
            intervals,
            rows,
            samples,
        }
    }

    /// Mean errors of one interval along the sweep.
    pub fn error_column(&self, interval_index: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.interval_index == interval_index)
            .map(|r| r.mean_sq_error)
            .collect()
    }

    pub fn strictly_decreasing(&self, interval_index: usize) -> bool {
        self.error_column(interval_index).windows(2).all(|w| w[1] < w[0])
    }

    /// Paired (common-noise) comparison of successive Λ values.
    pub fn noise_floor(&self, interval_index: usize) -> Option<NoiseFloor> {
        let ii = self.intervals.iter().position(|&i| i == interval_index)?;
        let mut floor = None;
        let mut monotone = true;
        for li in 0..self.lambdas.len().saturating_sub(1) {
            let d: Vec<f64> = self.samples[li][ii]
                .iter()
                .zip(&self.samples[li + 1][ii])
                .map(|(a, b)| a - b)
                .collect();
            let (mean, se) = mean_se(&d);
            let decreasing = mean > 3.0 * se && mean > 0.0;
            if !decreasing && floor.is_none() {
                floor = Some(li);
            }
            if mean < -3.0 * se && mean < 0.0 {
                monotone = false;
            }
        }
        let col = self.error_column(interval_index);
        Some(NoiseFloor {
            interval_index,
            floor_lambda: floor.map(|li| self.lambdas[li]),
            floor_error: floor.map(|li| col[li]),
            monotone_to_floor: monotone,
        })
    }
}

/// Closed-loop trajectory of `problem` for replicate 0 of `seed`.
pub fn closed_loop_simulate(
    problem: &ProblemSpec,
    actuator: &Actuator,
    target: &SteeringTarget,
    lambda_reg: f64,
    seed: u64,
) -> Result<ClosedLoopRun> {
    let cl = ClosedLoop::new(Simulator::new(problem.clone())?, actuator.clone(), target.clone())?;
    let noise = cl.sim.noise(seed, 0);
    cl.simulate(lambda_reg, &noise)
}

pub fn lambda_sweep(
    problem: &ProblemSpec,
    actuator: &Actuator,
    target: &SteeringTarget,
    lambdas: &[f64],
    replicates: usize,
    seed: u64,
) -> Result<SweepTable> {
    let cl = ClosedLoop::new(Simulator::new(problem.clone())?, actuator.clone(), target.clone())?;
    cl.sweep(lambdas, replicates, seed)
}

/// `‖ΛΔ(Λ, Γ)p‖²`, the terminal error the steering identity predicts.
pub fn predicted_error(lambda_reg: f64, gram: &GramianOp, p: &DVector<f64>) -> Result<f64> {
    Ok((resolvent_delta(lambda_reg, gram)? * p * lambda_reg).norm_squared())
}
