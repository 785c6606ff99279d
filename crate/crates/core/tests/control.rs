use fracsteer_core::control::*;
use fracsteer_core::mittag_leffler::{propagator_s, Basis, SpectralOperator};
use fracsteer_core::scenario::HeatScenario;
use fracsteer_core::solver::{Functional, Simulator};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::gamma;

/// `∫_0^L S(u)² du` by tanh-sinh after `u = w²`, which removes the `u^(-1/2)`
/// endpoint behaviour of `S²` at `q = 3/4`.
fn scalar_gramian(lambda: f64, len: f64) -> f64 {
    let f = |w: f64| {
        if w == 0.0 {
            return 0.0;
        }
        let s = propagator_s(0.75, lambda, w * w).unwrap();
        2.0 * w * s * s
    };
    quadrature::double_exponential::integrate(f, 0.0, len.sqrt(), 1e-12).integral
}

fn scalar_spec(lambda: f64) -> SpectralOperator {
    SpectralOperator::new(vec![lambda], Basis::Custom).unwrap()
}

#[test]
fn scalar_gramian_closed_form() {
    let g = gramian(0.75, &scalar_spec(0.0), &Actuator::identity(1), 0.0, 1.0, 64).unwrap();
    let expected = 2.0 / gamma(0.75).powi(2);
    assert!((g.matrix[(0, 0)] - expected).abs() < 1e-10);
    assert!((expected - 1.331_871_742_006_801).abs() < 1e-12);
    assert!(gramian(0.5, &scalar_spec(0.0), &Actuator::identity(1), 0.0, 1.0, 64).is_err());
    assert!(gramian(0.75, &scalar_spec(0.0), &Actuator::identity(1), 1.0, 1.0, 64).is_err());
}

#[test]
fn heat_gramian_is_diagonal_with_scalar_entries() {
    let spec = SpectralOperator::dirichlet_laplacian(8).unwrap();
    let g = gramian(0.75, &spec, &Actuator::identity(8), 2.0, 3.0, 256).unwrap();
    for n in 0..8 {
        let oracle = scalar_gramian(spec.eigenvalues()[n], 1.0);
        assert!(((g.matrix[(n, n)] - oracle) / oracle).abs() < 1e-6, "mode {n}");
        for m in 0..8 {
            if m != n {
                assert_eq!(g.matrix[(n, m)], 0.0);
            }
        }
    }
}

#[test]
fn zero_actuator_gives_zero_gramian() {
    let spec = SpectralOperator::dirichlet_laplacian(3).unwrap();
    let a = Actuator::new(DMatrix::zeros(3, 2)).unwrap();
    let g = gramian(0.75, &spec, &a, 0.0, 1.0, 16).unwrap();
    assert!(g.matrix.iter().all(|&v| v == 0.0));
}

#[test]
fn gramian_with_coupled_actuator_is_symmetric_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = SpectralOperator::dirichlet_laplacian(4).unwrap();
    for _ in 0..3 {
        let a = Actuator::new(DMatrix::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let g = gramian(0.75, &spec, &a, 0.0, 1.5, 64).unwrap();
        assert!((&g.matrix - g.matrix.transpose()).amax() < 1e-14);
        assert!(g.min_eigenvalue() >= -1e-10);
    }
}

#[test]
fn resolvent_examples() {
    let zero = GramianOp {
        start: 0.0,
        end: 1.0,
        matrix: DMatrix::zeros(3, 3),
        step: 0.1,
    };
    let d = resolvent_delta(0.5, &zero).unwrap();
    assert!((d - DMatrix::identity(3, 3) * 2.0).amax() < 1e-15);
    let one = GramianOp {
        matrix: DMatrix::from_element(1, 1, 1.0),
        ..zero.clone()
    };
    assert!((resolvent_delta(1.0, &one).unwrap()[(0, 0)] - 0.5).abs() < 1e-15);
    assert!(resolvent_delta(0.0, &one).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let b = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
    let spd = GramianOp {
        matrix: &b * b.transpose(),
        ..zero
    };
    let lambda = 1e-3;
    let dense = (&spd.matrix + DMatrix::identity(5, 5) * lambda).try_inverse().unwrap();
    let got = resolvent_delta(lambda, &spd).unwrap();
    assert!((&got - &dense).amax() <= 1e-8 * dense.amax());
}

proptest! {
    #[test]
    fn regularized_resolvent_is_nonexpansive(
        entries in proptest::collection::vec(-1.0f64..1.0, 16),
        v in proptest::collection::vec(-10.0f64..10.0, 4),
        lambda in 1e-6f64..10.0,
    ) {
        let b = DMatrix::from_vec(4, 4, entries);
        let gram = GramianOp { start: 0.0, end: 1.0, matrix: &b * b.transpose(), step: 1.0 };
        let v = DVector::from_vec(v);
        let out = resolvent_delta(lambda, &gram).unwrap() * &v * lambda;
        prop_assert!(out.norm() <= v.norm() * (1.0 + 1e-9));
    }

    #[test]
    fn actuator_adjoint_is_consistent(
        entries in proptest::collection::vec(-5.0f64..5.0, 12),
        u in proptest::collection::vec(-5.0f64..5.0, 3),
        z in proptest::collection::vec(-5.0f64..5.0, 4),
    ) {
        let a = Actuator::new(DMatrix::from_vec(4, 3, entries)).unwrap();
        let (u, z) = (DVector::from_vec(u), DVector::from_vec(z));
        let lhs = a.apply(&u).dot(&z);
        let rhs = u.dot(&a.apply_adjoint(&z));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }
}

#[test]
fn control_law_examples() {
    let spec = scalar_spec(-1.0);
    let a = Actuator::identity(1);
    let g = gramian(0.75, &spec, &a, 0.0, 1.0, 64).unwrap();
    let zero = control_law(0.3, 0.1, &g, &DVector::zeros(1), 0.75, &spec, &a).unwrap();
    assert_eq!(zero[0], 0.0);
    let p = DVector::from_element(1, 2.0);
    let u = control_law(0.3, 0.1, &g, &p, 0.75, &spec, &a).unwrap();
    let expected = propagator_s(0.75, -1.0, 0.7).unwrap() * 2.0 / (0.1 + g.matrix[(0, 0)]);
    assert!((u[0] - expected).abs() < 1e-12);
    assert!(control_law(1.0, 0.1, &g, &p, 0.75, &spec, &a).is_err());
    let none = Actuator::new(DMatrix::zeros(1, 1)).unwrap();
    assert_eq!(control_law(0.3, 0.1, &g, &p, 0.75, &spec, &none).unwrap()[0], 0.0);
}

#[test]
fn residual_examples() {
    // all coefficients zero: p = target
    let lin = HeatScenario::linear();
    let sim = Simulator::new(lin.problem().unwrap()).unwrap();
    let noise = sim.noise(0, 0);
    let tr = sim.simulate(&noise).unwrap();
    let target = lin.target_state();
    assert_eq!(residual_p(&sim, 0, &tr, &noise, &target).unwrap(), target);

    // constant forcing, zero target: p = -c t^q / Γ(q + 1) on [0, 1]
    let mut p = HeatScenario {
        modes: 1,
        ..HeatScenario::linear()
    }
    .problem()
    .unwrap();
    p.operator = scalar_spec(0.0);
    p.drift = Functional::Custom(std::sync::Arc::new(|_, _| DVector::from_element(1, 0.6)));
    let sim = Simulator::new(p).unwrap();
    let noise = sim.noise(0, 0);
    let tr = sim.simulate(&noise).unwrap();
    let zero = DVector::zeros(1);
    let r = residual_p(&sim, 0, &tr, &noise, &zero).unwrap()[0];
    assert!((r + 0.6 / gamma(1.75)).abs() < 1e-4);
    // affine in the target with unit coefficient
    let shifted = residual_p(&sim, 0, &tr, &noise, &DVector::from_element(1, 2.5)).unwrap()[0];
    assert!((shifted - r - 2.5).abs() < 1e-14);
}

#[test]
fn noiseless_linear_sweep_matches_oracle() {
    let lin = HeatScenario::linear();
    let lambdas = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5];
    let table = lambda_sweep(
        &lin.problem().unwrap(),
        &lin.actuator(),
        &lin.target(false).unwrap(),
        &lambdas,
        1,
        0,
    )
    .unwrap();
    let z = lin.target_state();
    let gammas: Vec<f64> = (1..=8).map(|n| scalar_gramian(-((n * n) as f64), 1.0)).collect();
    for &i in &table.intervals {
        assert!(table.strictly_decreasing(i));
        for row in table.rows.iter().filter(|r| r.interval_index == i) {
            let oracle: f64 = (0..8)
                .map(|n| (row.lambda / (row.lambda + gammas[n])).powi(2) * z[n] * z[n])
                .sum();
            assert!(((row.mean_sq_error - oracle) / oracle).abs() < 1e-3, "{row:?} vs {oracle}");
        }
    }
}

#[test]
fn scalar_error_ratio_follows_oracle() {
    let mut p = HeatScenario {
        modes: 1,
        partition: vec![0.0, 1.0],
        ..HeatScenario::linear()
    }
    .problem()
    .unwrap();
    p.operator = scalar_spec(-1.0);
    let target = SteeringTarget::uniform(DVector::from_element(1, 1.0), 1, false).unwrap();
    let table = lambda_sweep(&p, &Actuator::identity(1), &target, &[1e-2, 1e-3], 1, 0).unwrap();
    let g = scalar_gramian(-1.0, 1.0);
    let col = table.error_column(0);
    let predicted = ((1e-3 / (1e-3 + g)) / (1e-2 / (1e-2 + g))).powi(2);
    assert!(((col[1] / col[0]) / predicted - 1.0).abs() < 1e-3);
}

#[test]
fn steering_identity_with_memory_and_impulses() {
    let sc = HeatScenario {
        noise: false,
        dt: 1.0 / 128.0,
        ..HeatScenario::default()
    };
    let cl = ClosedLoop::new(
        Simulator::new(sc.problem().unwrap()).unwrap(),
        sc.actuator(),
        sc.target(false).unwrap(),
    )
    .unwrap();
    let lambda = 1e-3;
    let noise = cl.simulator().noise(0, 0);
    let run = cl.simulate(lambda, &noise).unwrap();
    for i in 0..3 {
        let p = residual_p(cl.simulator(), i, &run.trajectory, &noise, cl.target().target(i)).unwrap();
        let delta = resolvent_delta(lambda, cl.gramian(i).unwrap()).unwrap();
        let predicted = cl.target().target(i) - delta * &p * lambda;
        let t = sc.partition[2 * i + 1];
        let got = run.trajectory.value(t).unwrap();
        assert!((got - predicted).amax() < 1e-4, "interval {i}");
    }
}

#[test]
fn huge_regularization_recovers_uncontrolled_run() {
    let sc = HeatScenario {
        dt: 1.0 / 64.0,
        ..HeatScenario::default()
    };
    let sim = Simulator::new(sc.problem().unwrap()).unwrap();
    let cl = ClosedLoop::new(sim.clone(), sc.actuator(), sc.target(false).unwrap()).unwrap();
    let noise = sim.noise(4, 0);
    let free = sim.simulate(&noise).unwrap();
    let run = cl.simulate(1e12, &noise).unwrap();
    let gap = run
        .trajectory
        .path
        .raw()
        .iter()
        .zip(free.path.raw())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(gap < 1e-9, "gap {gap}");
}

#[test]
fn zero_target_and_forcing_stay_at_rest() {
    let lin = HeatScenario::linear();
    let target = SteeringTarget::uniform(DVector::zeros(8), 3, false).unwrap();
    let run = closed_loop_simulate(&lin.problem().unwrap(), &lin.actuator(), &target, 1e-3, 0).unwrap();
    assert!(run.trajectory.path.raw().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_actuator_leaves_terminal_state_alone() {
    let sc = HeatScenario {
        noise: false,
        dt: 1.0 / 64.0,
        ..HeatScenario::default()
    };
    let problem = sc.problem().unwrap();
    let free = fracsteer_core::solver::simulate(&problem, 0).unwrap();
    let none = Actuator::new(DMatrix::zeros(8, 8)).unwrap();
    let run = closed_loop_simulate(&problem, &none, &sc.target(false).unwrap(), 1e-3, 0).unwrap();
    assert_eq!(run.trajectory.terminal(), free.terminal());
}

#[test]
fn final_only_steers_last_interval() {
    let lin = HeatScenario::linear();
    let run = closed_loop_simulate(&lin.problem().unwrap(), &lin.actuator(), &lin.target(true).unwrap(), 1e-4, 0).unwrap();
    assert_eq!(run.terminal_errors[..2], [None, None]);
    assert!(run.terminal_errors[2].unwrap() < 1e-4);
    assert!(run.trajectory.value(1.0).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn noisy_sweep_decreases_and_is_reproducible() {
    let sc = HeatScenario {
        dt: 1.0 / 32.0,
        ..HeatScenario::default()
    };
    let p = sc.problem().unwrap();
    let lambdas = [1e-1, 1e-2, 1e-3];
    let run = || lambda_sweep(&p, &sc.actuator(), &sc.target(false).unwrap(), &lambdas, 16, 5).unwrap();
    let table = run();
    for &i in &table.intervals {
        let floor = table.noise_floor(i).unwrap();
        assert!(floor.monotone_to_floor);
    }
    assert_eq!(table, run());
    assert!(lambda_sweep(&p, &sc.actuator(), &sc.target(false).unwrap(), &[1e-2, 1e-1], 2, 5).is_err());
}
