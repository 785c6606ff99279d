use fracsteer_core::mittag_leffler::{mittag_leffler, propagator_s, propagator_t};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

/// Fixed Talbot inversion of a Laplace transform.
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

#[test]
fn propagators_match_laplace_inversion() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let q: f64 = rng.random_range(0.55..0.95);
        let lambda: f64 = -rng.random_range(0.0..50.0);
        let t: f64 = rng.random_range(0.05..5.0);
        let t_ref = talbot(|s| s.powf(q - 1.0) / (s.powf(q) - lambda), t);
        let s_ref = talbot(|s| 1.0 / (s.powf(q) - lambda), t);
        let tv = propagator_t(q, lambda, t).unwrap();
        let sv = propagator_s(q, lambda, t).unwrap();
        assert!((tv - t_ref).abs() < 1e-6, "T q={q} λ={lambda} t={t}: {tv} vs {t_ref}");
        assert!((sv - s_ref).abs() < 1e-6, "S q={q} λ={lambda} t={t}: {sv} vs {s_ref}");
    }
}

#[test]
fn series_and_integral_routes_agree_at_switch() {
    // Neighbouring arguments straddle the switch from series to integral.
    for &z in &[-5.0, -8.0, -12.0, -20.0] {
        let a = mittag_leffler(0.75, 1.0, z).unwrap();
        let b = mittag_leffler(0.75, 1.0, z - 1e-7).unwrap();
        assert!((a - b).abs() < 1e-6);
    }
}

proptest! {
    #[test]
    fn exp_special_case(x in -30.0f64..30.0) {
        let v = mittag_leffler(1.0, 1.0, x).unwrap();
        prop_assert!((v - x.exp()).abs() <= 1e-10 * x.exp().max(1.0));
    }

    #[test]
    fn cos_special_case(x in 0.0f64..12.0) {
        let v = mittag_leffler(2.0, 1.0, -x * x).unwrap();
        prop_assert!((v - x.cos()).abs() <= 1e-10);
    }

    #[test]
    fn relaxation_is_a_contraction(q in 0.55f64..0.95, lambda in -80.0f64..0.0, t in 0.0f64..10.0) {
        let v = propagator_t(q, lambda, t).unwrap();
        prop_assert!(v > 0.0 && v <= 1.0 + 1e-14);
    }

    #[test]
    fn relaxation_decreases_in_time(q in 0.55f64..0.95, lambda in -40.0f64..-0.1, t in 0.01f64..5.0) {
        let a = propagator_t(q, lambda, t).unwrap();
        let b = propagator_t(q, lambda, t * 1.1).unwrap();
        prop_assert!(b <= a + 1e-12);
    }
}
