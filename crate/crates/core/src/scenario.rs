//! Built-in "heat" scenario: Caputo heat equation on `(0, π)` with Dirichlet
//! ends, exponential-memory drift, diffusion and impulses, truncated to the
//! first `modes` sine modes.

use std::sync::Arc;

use nalgebra::DVector;

use crate::control::{Actuator, SteeringTarget};
use crate::error::{Error, Result};
use crate::mittag_leffler::SpectralOperator;
use crate::noise::QStructure;
use crate::phase_space::WeightFunction;
use crate::solver::{
    DeclaredConstants, Diffusion, Functional, ProblemSpec, Sigma, SolverOptions, TimePartition,
};

/// Parameters of the heat scenario. Defaults are the documented baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatScenario {
    pub modes: usize,
    pub q: f64,
    pub hurst: f64,
    pub dt: f64,
    /// `[0, t_1, s_1, …, t_m, s_m, T]`.
    pub partition: Vec<f64>,
    /// `F(φ) = drift_scale ∫ e^(drift_rate θ) φ(θ) dθ`.
    pub drift_scale: f64,
    pub drift_rate: f64,
    pub diffusion_scale: f64,
    pub diffusion_rate: f64,
    /// `K_i(t, φ) = impulse_scale ∫ e^(impulse_rate θ) φ(θ) dθ`.
    pub impulse_scale: f64,
    pub impulse_rate: f64,
    /// Constant diagonal `σ`.
    pub sigma: f64,
    /// `Q` eigenvalues `n^(-decay)`.
    pub wiener_decay: f64,
    pub fbm_decay: f64,
    /// Weight `h(e) = e^(weight_rate e)`.
    pub weight_rate: f64,
    pub tau_max: f64,
    /// `φ_n(θ) = amplitude (1 - e^θ) / n²`.
    pub history_amplitude: f64,
    pub noise: bool,
    pub options: SolverOptions,
}

impl Default for HeatScenario {
    fn default() -> Self {
        Self {
            modes: 8,
            q: 0.75,
            hurst: 0.75,
            dt: 1.0 / 256.0,
            partition: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            drift_scale: 1.0,
            drift_rate: 4.0,
            diffusion_scale: 1.0,
            diffusion_rate: 6.0,
            impulse_scale: 1.0,
            impulse_rate: 3.0,
            sigma: 0.1,
            wiener_decay: 2.0,
            fbm_decay: 2.0,
            weight_rate: 2.0,
            tau_max: 10.0,
            history_amplitude: 1.0,
            noise: true,
            options: SolverOptions::default(),
        }
    }
}

fn memory(scale: f64, rate: f64) -> Functional {
    if scale == 0.0 {
        Functional::Zero
    } else {
        Functional::ExpMemory { rate, scale }
    }
}

impl HeatScenario {
    /// Only the actuated heat operator: no forcing, impulses or noise.
    pub fn linear() -> Self {
        Self {
            drift_scale: 0.0,
            diffusion_scale: 0.0,
            impulse_scale: 0.0,
            sigma: 0.0,
            history_amplitude: 0.0,
            noise: false,
            ..Self::default()
        }
    }

    pub fn impulses(&self) -> usize {
        self.partition.len() / 2 - 1
    }

    pub fn wiener_q(&self) -> Result<QStructure> {
        QStructure::power_law(self.modes, self.wiener_decay)
    }

    pub fn fbm_q(&self) -> Result<QStructure> {
        QStructure::power_law(self.modes, self.fbm_decay)
    }

    /// Hypothesis constants implied by the coefficients. The memory bounds need
    /// kernel rates at least the weight rate; slower kernels leave the
    /// constants undeclared.
    pub fn constants(&self) -> Result<Option<DeclaredConstants>> {
        let m = self.impulses();
        let slow = |scale: f64, rate: f64| scale != 0.0 && rate < self.weight_rate;
        if slow(self.drift_scale, self.drift_rate)
            || slow(self.diffusion_scale, self.diffusion_rate)
            || slow(self.impulse_scale, self.impulse_rate)
        {
            return Ok(None);
        }
        let wq = self.wiener_q()?;
        let fq = self.fbm_q()?;
        let max_w = wq.eigenvalues().iter().copied().fold(0.0, f64::max);
        let (sigma, diffusion) = if self.noise {
            (self.sigma, self.diffusion_scale)
        } else {
            (0.0, 0.0)
        };
        let n_f = self.drift_scale * self.drift_scale;
        let n_g = diffusion * diffusion * max_w;
        let l_k = self.impulse_scale * self.impulse_scale;
        Ok(Some(DeclaredConstants {
            n_f,
            n_g,
            l_k: vec![l_k; m],
            xi1: n_f,
            xi2: n_g,
            upsilon: vec![l_k; m],
            lambda_sigma: sigma * sigma * fq.trace(),
        }))
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        if self.modes == 0 {
            return Err(Error::domain("heat scenario needs at least one mode"));
        }
        let m = self.impulses();
        let amp = self.history_amplitude;
        let history = Arc::new(move |theta: f64, row: &mut [f64]| {
            for (n, v) in row.iter_mut().enumerate() {
                let k = (n + 1) as f64;
                *v = amp * (1.0 - theta.exp()) / (k * k);
            }
        });
        let (diffusion, sigma) = if self.noise {
            (
                Diffusion::Diagonal(memory(self.diffusion_scale, self.diffusion_rate)),
                if self.sigma == 0.0 {
                    Sigma::Zero
                } else {
                    Sigma::ConstantDiagonal(vec![self.sigma; self.modes])
                },
            )
        } else {
            (Diffusion::Zero, Sigma::Zero)
        };
        Ok(ProblemSpec {
            q: self.q,
            operator: SpectralOperator::dirichlet_laplacian(self.modes)?,
            partition: TimePartition::new(self.partition.clone(), self.dt)?,
            drift: memory(self.drift_scale, self.drift_rate),
            diffusion,
            sigma,
            impulses: vec![memory(self.impulse_scale, self.impulse_rate); m],
            history,
            tau_max: self.tau_max,
            weight: WeightFunction::exponential(1.0, self.weight_rate)?,
            wiener_q: self.wiener_q()?,
            fbm_q: self.fbm_q()?,
            hurst: self.hurst,
            constants: self.constants()?,
            options: self.options,
        })
    }

    /// Sine coefficients `1/n` of the terminal profile.
    pub fn target_state(&self) -> DVector<f64> {
        DVector::from_fn(self.modes, |n, _| 1.0 / (n + 1) as f64)
    }

    pub fn target(&self, final_only: bool) -> Result<SteeringTarget> {
        SteeringTarget::uniform(self.target_state(), self.impulses() + 1, final_only)
    }

    /// `𝒜 = I`: the control acts on every mode.
    pub fn actuator(&self) -> Actuator {
        Actuator::identity(self.modes)
    }
}
