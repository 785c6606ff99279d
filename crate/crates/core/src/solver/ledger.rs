//! Contraction and growth constants of the existence theorems, evaluated from
//! the declared hypothesis constants and the measured propagator bounds.

use crate::error::{Error, Result};

/// Hypothesis constants supplied with a problem. Vectors are indexed by the
/// impulse number `i = 1..=m` (stored at `i - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct DeclaredConstants {
    /// Mean-square Lipschitz constant of the drift.
    pub n_f: f64,
    /// Mean-square Lipschitz constant of the diffusion in the Hilbert-Schmidt norm.
    pub n_g: f64,
    /// Lipschitz constants of the impulse maps.
    pub l_k: Vec<f64>,
    /// Growth bounds `ξ1*`, `ξ2*` of drift and diffusion.
    pub xi1: f64,
    pub xi2: f64,
    /// Growth bounds of the impulse maps.
    pub upsilon: Vec<f64>,
    /// Uniform bound on the squared Hilbert-Schmidt norm of `σ`.
    pub lambda_sigma: f64,
}

impl DeclaredConstants {
    pub fn zero(m: usize) -> Self {
        Self {
            n_f: 0.0,
            n_g: 0.0,
            l_k: vec![0.0; m],
            xi1: 0.0,
            xi2: 0.0,
            upsilon: vec![0.0; m],
            lambda_sigma: 0.0,
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.l_k.len() != m || self.upsilon.len() != m {
            return Err(Error::domain(format!("expected {m} impulse constants")));
        }
        let all = [self.n_f, self.n_g, self.xi1, self.xi2, self.lambda_sigma];
        if all
            .iter()
            .chain(&self.l_k)
            .chain(&self.upsilon)
            .any(|&c| !(c >= 0.0) || !c.is_finite())
        {
            return Err(Error::domain("declared constants must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Everything the ledger formulas consume.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerInputs {
    pub q: f64,
    pub hurst: f64,
    /// Flow end points `t_1, …, t_{m+1}`; the last one is the horizon `T`.
    pub t_ends: Vec<f64>,
    pub m1: f64,
    pub m2: f64,
    pub varpi: f64,
    /// `‖φ‖_{D_h}` of the initial history.
    pub phi_norm: f64,
    /// Radius of the ball for the growth conditions.
    pub r: f64,
    pub constants: DeclaredConstants,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantsLedger {
    pub eta0: f64,
    pub eta: Vec<f64>,
    pub l_r: f64,
    pub kappa0: f64,
    pub kappa: Vec<f64>,
    pub l_hr: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub r: f64,
    pub varpi: f64,
    pub m1: f64,
    pub m2: f64,
    pub phi_norm: f64,
    /// `max_i {κ0, υ_i λ3, κ_i}`.
    pub growth_max: f64,
}

impl ConstantsLedger {
    /// Uniqueness condition of the contraction theorem.
    pub fn contraction_holds(&self) -> bool {
        self.l_r < 1.0
    }

    /// Lipschitz part of the existence condition of the Krasnoselskii theorem.
    pub fn l_hr_holds(&self) -> bool {
        self.l_hr < 1.0
    }

    /// Growth part of the same condition, compared against the ball radius.
    pub fn growth_holds(&self) -> bool {
        self.growth_max < self.r
    }
}

pub fn evaluate_ledger(inp: &LedgerInputs) -> Result<ConstantsLedger> {
    let q = inp.q;
    if !(q > 0.5 && q < 1.0) {
        return Err(Error::domain(format!("q = {q} must lie in (1/2, 1)")));
    }
    if !(inp.hurst > 0.5 && inp.hurst < 1.0) {
        return Err(Error::domain("Hurst index must lie in (1/2, 1)"));
    }
    if inp.t_ends.is_empty() || inp.t_ends.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::domain("flow end points must be positive"));
    }
    let m = inp.t_ends.len() - 1;
    let c = &inp.constants;
    c.validate(m)?;
    if !(inp.r > 0.0) {
        return Err(Error::domain("ball radius r must be positive"));
    }

    let (m1s, m2s, w2) = (inp.m1 * inp.m1, inp.m2 * inp.m2, inp.varpi * inp.varpi);
    let lip = |t: f64| c.n_f * t.powf(2.0 * q) / (q * q) + c.n_g * t.powf(2.0 * q - 1.0) / (2.0 * q - 1.0);
    let ball = inp.phi_norm * inp.phi_norm + w2 * inp.r;
    let lambda1 = 8.0 * c.xi1 * ball;
    let lambda2 = 8.0 * c.xi2 * ball;
    let lambda3 = 8.0 * ball;
    let h = inp.hurst;
    let growth = |t: f64| {
        lambda1 / (q * q)
            + lambda2 / (t * (2.0 * q - 1.0))
            + 2.0 * h * c.lambda_sigma * t.powf(2.0 * h - 2.0) / (2.0 * q - 1.0)
    };

    let t1 = inp.t_ends[0];
    let big_t = inp.t_ends[m];
    let eta0 = 2.0 * m2s * w2 * lip(t1);
    let eta: Vec<f64> = (1..=m)
        .map(|i| 3.0 * m1s * c.l_k[i - 1] * w2 + 3.0 * m2s * w2 * lip(inp.t_ends[i]))
        .collect();
    let l_r = (1..=m)
        .map(|i| (w2 * c.l_k[i - 1]).max(eta[i - 1]))
        .fold(eta0, f64::max);

    let kappa0 = 3.0 * m2s * t1.powf(2.0 * q) * growth(t1);
    let kappa: Vec<f64> = (1..=m)
        .map(|i| {
            let t = inp.t_ends[i];
            4.0 * m1s * c.upsilon[i - 1] * lambda3 + 4.0 * m2s * t.powf(2.0 * q) * growth(t)
        })
        .collect();
    let growth_max = (1..=m)
        .map(|i| (c.upsilon[i - 1] * lambda3).max(kappa[i - 1]))
        .fold(kappa0, f64::max);
    let l_hr = 2.0 * m2s * w2 * lip(big_t);

    Ok(ConstantsLedger {
        eta0,
        eta,
        l_r,
        kappa0,
        kappa,
        l_hr,
        lambda1,
        lambda2,
        lambda3,
        r: inp.r,
        varpi: inp.varpi,
        m1: inp.m1,
        m2: inp.m2,
        phi_norm: inp.phi_norm,
        growth_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs() -> LedgerInputs {
        LedgerInputs {
            q: 0.75,
            hurst: 0.75,
            t_ends: vec![1.0, 3.0],
            m1: 1.0,
            m2: 1.0,
            varpi: 0.5,
            phi_norm: 0.0,
            r: 1.0,
            constants: DeclaredConstants {
                n_f: 1.0,
                n_g: 1.0,
                ..DeclaredConstants::zero(1)
            },
        }
    }

    #[test]
    fn eta0_hand_value() {
        let l = evaluate_ledger(&inputs()).unwrap();
        let expected = 2.0 * 0.25 * (1.0 / 0.5625 + 1.0 / 0.5);
        assert!((l.eta0 - expected).abs() < 1e-14);
    }

    #[test]
    fn zero_constants_leave_only_lambda3() {
        let mut inp = inputs();
        inp.constants = DeclaredConstants::zero(1);
        inp.phi_norm = 0.3;
        let l = evaluate_ledger(&inp).unwrap();
        assert_eq!(l.eta0, 0.0);
        assert_eq!(l.l_r, 0.0);
        assert_eq!(l.kappa0, 0.0);
        assert_eq!(l.l_hr, 0.0);
        assert!((l.lambda3 - 8.0 * (0.09 + 0.25)).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_order() {
        let mut inp = inputs();
        inp.q = 0.5;
        assert!(evaluate_ledger(&inp).is_err());
    }
}
