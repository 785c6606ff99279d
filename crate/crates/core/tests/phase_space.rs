use fracsteer_core::phase_space::*;
use fracsteer_core::special::GaussLegendre;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn weight() -> WeightFunction {
    WeightFunction::exponential(1.0, 2.0).unwrap()
}

#[test]
fn varpi_of_heat_weight() {
    let w = weight();
    assert!((w.varpi() - 0.5).abs() < 1e-8);
    assert!(w.tail_mass() <= 1e-12);
}

#[test]
fn clipped_ramp_norm() {
    let hist = HistoryBuffer::from_fn(12.0, 1.0 / 2048.0, |th| DVector::from_element(1, (-th).min(1.0))).unwrap();
    let got = dh_norm(&hist, &weight());
    // Independent Gauss-Legendre evaluation of ∫ h(e) sup_{[e,0]} |φ| de.
    let gl = GaussLegendre::new(20);
    let ramp = gl.integrate_composite(-1.0, 0.0, 8, |e| -e * (2.0 * e).exp());
    let flat = gl.integrate_composite(-12.0, -1.0, 44, |e| (2.0 * e).exp());
    assert!((got - (ramp + flat)).abs() < 1e-6, "{got} vs {}", ramp + flat);
    assert!((got - 0.216_165_7).abs() < 1e-6);
}

#[test]
fn doubling_the_window_respects_tail_mass() {
    let w = weight();
    let phi = |th: f64| DVector::from_element(2, (1.0 - th.exp()) * 0.7);
    let short = HistoryBuffer::from_fn(10.0, 1.0 / 64.0, phi).unwrap();
    let long = HistoryBuffer::from_fn(20.0, 1.0 / 64.0, phi).unwrap();
    let max_sup = 0.7 * 2f64.sqrt();
    // trapezoid overestimates the convex weight by O(dt²) relative
    let tail = (-20.0f64).exp() / 2.0 * 1.001;
    assert!((dh_norm(&long, &w) - dh_norm(&short, &w)).abs() <= tail * max_sup);
}

#[test]
fn segment_at_origin_is_initial_history() {
    let phi = |t: f64, row: &mut [f64]| row[0] = t.sin();
    let path = Path::with_history(0.125, 1, 3.0, 1.0, phi).unwrap();
    let seg = path.segment(0.0, 2.0).unwrap();
    for (o, v) in seg.offsets().iter().zip(seg.values()) {
        assert!((v[0] - o.sin()).abs() < 1e-15);
    }
    assert!(path.segment(1.5, 1.0).is_err());
}

#[test]
fn embedding_bound_for_ramp_after_zero_history() {
    let mut path = Path::zeros(1.0 / 128.0, 1, 11.0, 1.0).unwrap();
    for k in path.origin()..path.len() {
        let t = path.time(k);
        path.row_mut(k)[0] = t;
    }
    let c = embedding_check(&path, 1.0, &weight(), 10.0).unwrap();
    assert!(c.holds);
    // the running sup of z_1 is 1 at every lag: equality case ‖z_1‖ = ϖ·1
    assert!((c.lhs - 0.5).abs() < 1e-4);
    assert!((c.rhs - 0.5).abs() < 1e-4);
    let zero = Path::zeros(0.25, 2, 5.0, 1.0).unwrap();
    let z = embedding_check(&zero, 0.5, &weight(), 4.0).unwrap();
    assert_eq!((z.lhs, z.rhs, z.holds), (0.0, 0.0, true));
}

#[test]
fn embedding_bound_on_random_piecewise_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let w = weight();
    for _ in 0..100 {
        let modes = rng.random_range(1..4);
        let horizon = 2.0;
        let tau = 6.0;
        let dt = 1.0 / 32.0;
        let amps: Vec<f64> = (0..modes).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut path = Path::with_history(dt, modes, tau + horizon, horizon, |t, row| {
            for (v, a) in row.iter_mut().zip(&amps) {
                *v = a * (1.0 - (0.5 * t).exp());
            }
        })
        .unwrap();
        // piecewise constant levels on random breakpoints
        let mut level: Vec<f64> = vec![0.0; modes];
        for k in path.origin() + 1..path.len() {
            if rng.random_bool(0.1) {
                level = (0..modes).map(|_| rng.random_range(-3.0..3.0)).collect();
            }
            path.row_mut(k).copy_from_slice(&level);
        }
        let t = (rng.random_range(0.0..horizon) / dt).round() * dt;
        let c = embedding_check(&path, t, &w, tau).unwrap();
        assert!(c.holds, "t={t}: {} > {}", c.lhs, c.rhs);
    }
}

fn history(values: &[f64]) -> HistoryBuffer {
    let offsets: Vec<f64> = (0..values.len()).map(|k| -(k as f64) * 0.25).collect();
    HistoryBuffer::new(offsets, values.iter().map(|&v| DVector::from_element(1, v)).collect()).unwrap()
}

proptest! {
    #[test]
    fn norm_is_positively_homogeneous(v in proptest::collection::vec(-5.0f64..5.0, 2..40), c in 0.0f64..10.0) {
        let h = history(&v);
        let w = weight();
        let a = dh_norm(&h.scaled(c), &w);
        let b = c * dh_norm(&h, &w);
        prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0));
    }

    #[test]
    fn norm_satisfies_triangle_inequality(
        pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..40)
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (hx, hy) = (history(&x), history(&y));
        let w = weight();
        let sum = dh_norm(&hx.add(&hy).unwrap(), &w);
        prop_assert!(sum <= dh_norm(&hx, &w) + dh_norm(&hy, &w) + 1e-12);
    }
}
