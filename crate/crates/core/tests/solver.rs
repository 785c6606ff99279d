use std::sync::Arc;

use fracsteer_core::mittag_leffler::{Basis, SpectralOperator};
use fracsteer_core::noise::QStructure;
use fracsteer_core::phase_space::{embedding_check, Path, WeightFunction};
use fracsteer_core::scenario::HeatScenario;
use fracsteer_core::solver::*;
use fracsteer_core::special::GaussLegendre;
use fracsteer_core::Error;
use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use statrs::function::gamma::gamma;

fn talbot(f: impl Fn(Complex64) -> Complex64, t: f64) -> f64 {
    let m = 24;
    let r = 2.0 * m as f64 / (5.0 * t);
    let mut acc = 0.5 * (f(Complex64::new(r, 0.0)) * (r * t).exp()).re;
    for k in 1..m {
        let th = k as f64 * std::f64::consts::PI / m as f64;
        let cot = th.cos() / th.sin();
        let s = Complex64::new(r * th * cot, r * th);
        let sigma = th + (th * cot - 1.0) * cot;
        acc += ((s * t).exp() * f(s) * Complex64::new(1.0, sigma)).re;
    }
    r / m as f64 * acc
}

fn scalar_problem(lambda: f64, dt: f64, points: Vec<f64>, drift: Functional) -> ProblemSpec {
    let m = points.len() / 2 - 1;
    ProblemSpec {
        q: 0.75,
        operator: SpectralOperator::new(vec![lambda], Basis::Custom).unwrap(),
        partition: TimePartition::new(points, dt).unwrap(),
        drift,
        diffusion: Diffusion::Zero,
        sigma: Sigma::Zero,
        impulses: vec![Functional::Zero; m],
        history: Arc::new(|_, row: &mut [f64]| row.fill(0.0)),
        tau_max: 2.0,
        weight: WeightFunction::exponential(1.0, 2.0).unwrap(),
        wiener_q: QStructure::new(vec![1.0]).unwrap(),
        fbm_q: QStructure::new(vec![1.0]).unwrap(),
        hurst: 0.75,
        constants: None,
        options: SolverOptions::default(),
    }
}

fn constant(c: f64) -> Functional {
    Functional::Custom(Arc::new(move |_, _| DVector::from_element(1, c)))
}

/// `F = c + a z(t)`.
fn affine(c: f64, a: f64) -> Functional {
    Functional::Custom(Arc::new(move |_, seg| DVector::from_element(1, c + a * seg.at_lag(0)[0])))
}

#[test]
fn constant_forcing_matches_power_law() {
    let c = 1.3;
    let p = scalar_problem(0.0, 1.0 / 256.0, vec![0.0, 1.0], constant(c));
    let tr = simulate(&p, 0).unwrap();
    for &t in &[0.25f64, 0.5, 1.0] {
        let expected = c * t.powf(0.75) / gamma(1.75);
        assert!((tr.value(t).unwrap()[0] - expected).abs() < 1e-4);
    }
}

#[test]
fn left_rectangle_is_first_order() {
    let (c, a, lambda) = (1.0, 0.8, -2.0);
    let q = 0.75;
    let exact = talbot(|s| c / (s * (s.powf(q) - (lambda + a))), 1.0);
    let err = |dt: f64| {
        let p = scalar_problem(lambda, dt, vec![0.0, 1.0], affine(c, a));
        (simulate(&p, 0).unwrap().terminal()[0] - exact).abs()
    };
    let (e1, e2, e3) = (err(1.0 / 64.0), err(1.0 / 128.0), err(1.0 / 256.0));
    let (r1, r2) = (e1 / e2, e2 / e3);
    assert!((1.5..=2.5).contains(&r1) && (1.5..=2.5).contains(&r2), "ratios {r1} {r2}");
}

#[test]
fn trapezoidal_rule_beats_left_rectangle() {
    let (c, a, lambda) = (1.0, 0.8, -2.0);
    let exact = talbot(|s| c / (s * (s.powf(0.75) - (lambda + a))), 1.0);
    let mut p = scalar_problem(lambda, 1.0 / 128.0, vec![0.0, 1.0], affine(c, a));
    let left = (simulate(&p, 0).unwrap().terminal()[0] - exact).abs();
    p.options.rule = ProductRule::Trapezoidal;
    let trap = (simulate(&p, 0).unwrap().terminal()[0] - exact).abs();
    assert!(trap < left, "{trap} vs {left}");
}

#[test]
fn zero_input_gives_exact_zero() {
    let p = scalar_problem(-1.0, 1.0 / 64.0, vec![0.0, 1.0, 2.0, 3.0], Functional::Zero);
    let tr = simulate(&p, 9).unwrap();
    assert!(tr.path.raw().iter().all(|&v| v == 0.0));
    assert_eq!(tr.reports.len(), 3);
}

#[test]
fn picard_contracts_at_ledger_rate() {
    let mut sc = HeatScenario {
        drift_scale: 0.2,
        diffusion_scale: 0.2,
        impulse_scale: 0.5,
        dt: 1.0 / 128.0,
        ..HeatScenario::default()
    };
    // the default tolerance is met within three iterations, leaving no ratio to test
    sc.options.picard_tol = 1e-26;
    let p = sc.problem().unwrap();
    let ledger = ledger_evaluate(&p, &p.bounds().unwrap(), 1.0).unwrap();
    assert!(ledger.contraction_holds(), "L_R = {}", ledger.l_r);
    let tr = simulate(&p, 3).unwrap();
    let mut checked = 0;
    for r in tr.reports.iter().filter(|r| r.kind == IntervalKind::Flow) {
        for w in r.residuals.windows(2).skip(2) {
            assert!(w[1] / w[0] <= ledger.l_r + 0.1, "{:?}", r.residuals);
            checked += 1;
        }
    }
    assert!(checked >= 3, "only {checked} contraction ratios");
}

#[test]
fn picard_failure_reports_residuals() {
    let mut p = scalar_problem(-1.0, 1.0 / 64.0, vec![0.0, 1.0], affine(1.0, 0.5));
    p.options.picard_max_iter = 2;
    match simulate(&p, 0) {
        Err(Error::Convergence { residuals }) => assert_eq!(residuals.len(), 2),
        other => panic!("expected a convergence error, got {other:?}"),
    }
}

#[test]
fn impulse_value_is_carried_into_next_flow() {
    let mut p = scalar_problem(-1.0, 1.0 / 64.0, vec![0.0, 1.0, 2.0, 3.0], constant(1.0));
    p.impulses = vec![Functional::ExpMemory { rate: 3.0, scale: 0.5 }];
    let sim = Simulator::new(p.clone()).unwrap();
    let tr = sim.run(0, 0).unwrap();
    let ks = tr.path.index_of(2.0).unwrap();
    let kval = p.impulses[0].eval_at(&tr.path, ks);
    assert!((tr.path.row(ks)[0] - kval[0]).abs() < 1e-12);
    // z(t_1^-) = z(t_1): the value at the left end of the impulse interval is the flow value
    assert_eq!(tr.path.index_of(1.0).unwrap() + 64, ks);
    assert_eq!(sim.kernels()[0].relax[0], 1.0);
}

#[test]
fn delayed_readout_impulse_is_a_lookup() {
    let delta = 1.5;
    let mut p = scalar_problem(0.0, 1.0 / 64.0, vec![0.0, 1.0, 2.0, 3.0], constant(1.0));
    p.impulses = vec![Functional::Custom(Arc::new(move |_, seg| seg.at_offset(-delta)))];
    let tr = simulate(&p, 0).unwrap();
    for k in 1..=64 {
        let t = 1.0 + k as f64 / 64.0;
        let now = tr.value(t).unwrap()[0];
        let before = tr.path.value_at(t - delta).unwrap()[0];
        assert_eq!(now, before);
    }
}

#[test]
fn exponential_impulse_on_ramp_matches_quadrature() {
    let p = {
        let mut p = scalar_problem(0.0, 1.0 / 256.0, vec![0.0, 1.0, 2.0, 3.0], Functional::Zero);
        p.impulses = vec![Functional::ExpMemory { rate: 1.0, scale: 1.0 }];
        p
    };
    let sim = Simulator::new(p.clone()).unwrap();
    let dt = p.partition.dt();
    let mut path = p.new_path().unwrap();
    for k in 0..path.len() {
        let t = path.time(k);
        path.row_mut(k)[0] = t;
    }
    let t = 1.5;
    let k = path.index_of(t).unwrap();
    let got = sim.apply_impulse(&mut path, 1, k).unwrap()[0];
    // x = ∫ e^θ z(t+θ) dθ with z linear between (t - dt, t - dt) and (t, x)
    let lo = path.time(0) - t;
    let gl = GaussLegendre::new(20);
    let far = gl.integrate_composite(lo, -dt, 400, |th| th.exp() * (t + th));
    let near_old = gl.integrate(-dt, 0.0, |th| th.exp() * (t - dt) * (-th / dt));
    let near_new = gl.integrate(-dt, 0.0, |th| th.exp() * (1.0 + th / dt));
    let expected = (far + near_old) / (1.0 - near_new);
    assert!((got - expected).abs() < 1e-5, "{got} vs {expected}");
    let outside = path.index_of(2.5).unwrap();
    assert!(sim.apply_impulse(&mut path, 1, outside).is_err());
}

#[test]
fn deterministic_runs_ignore_the_seed() {
    let sc = HeatScenario {
        noise: false,
        dt: 1.0 / 64.0,
        ..HeatScenario::default()
    };
    let p = sc.problem().unwrap();
    assert_eq!(simulate(&p, 1).unwrap().path, simulate(&p, 2).unwrap().path);
}

#[test]
fn heat_trajectory_is_finite_and_respects_embedding_bound() {
    let p = HeatScenario::default().problem().unwrap();
    let tr = simulate(&p, 17).unwrap();
    assert!(tr.path.raw().iter().all(|v| v.is_finite()));
    assert!(tr.embedding_holds);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let t: f64 = rng.random_range(0.0..5.0);
        let t = (t * 256.0).round() / 256.0;
        assert!(embedding_check(&tr.path, t, &p.weight, p.tau_max).unwrap().holds);
    }
}

#[test]
fn additive_fbm_response_obeys_second_moment_bound() {
    let (s0, q, h, t) = (0.8, 0.75, 0.75, 1.0);
    let mut p = scalar_problem(-1.0, 1.0 / 64.0, vec![0.0, t], Functional::Zero);
    p.sigma = Sigma::ConstantDiagonal(vec![s0]);
    let sim = Simulator::new(p.clone()).unwrap();
    let m2 = p.bounds().unwrap().m2;
    let sq: Vec<f64> = (0..2000).map(|r| sim.run(5, r).unwrap().terminal()[0].powi(2)).collect();
    let n = sq.len() as f64;
    let mean = sq.iter().sum::<f64>() / n;
    let se = (sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let bound = 2.0 * h * t.powf(2.0 * h - 1.0) * m2 * m2 * t.powf(2.0 * q - 1.0) / (2.0 * q - 1.0) * s0 * s0;
    assert!(mean > 0.0 && mean <= bound + 3.0 * se, "{mean} vs {bound}");
}

#[test]
fn ledger_requires_declared_constants() {
    let p = scalar_problem(-1.0, 0.25, vec![0.0, 1.0], Functional::Zero);
    assert!(ledger_evaluate(&p, &p.bounds().unwrap(), 1.0).is_err());
}

#[test]
fn history_must_vanish_at_origin() {
    let mut p = scalar_problem(-1.0, 0.25, vec![0.0, 1.0], Functional::Zero);
    p.history = Arc::new(|_, row: &mut [f64]| row.fill(0.5));
    assert!(matches!(Simulator::new(p), Err(Error::Domain(_))));
    let _ = Path::zeros(0.25, 1, 1.0, 1.0).unwrap();
}
