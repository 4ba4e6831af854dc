//! Checks against independent references: closed forms, exact rational
//! arithmetic and a second quadrature rule.

use std::f64::consts::PI;

use mmforecast::calibration::{fit_sigma_alpha, FitConfig, PairSet};
use mmforecast::chaos::{self, RickerSystem};
use mmforecast::density::{
    empirical_ignorance, gaussian_entropy_bits, Climatology, Density, DressedDensity,
};
use mmforecast::models::{
    build_model_one, build_model_three, build_model_two, Dynamics, Rounding,
};
use mmforecast::seed;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Composite Simpson's rule with `n` (even) intervals.
fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n)
        .map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    (f(a) + inner + f(b)) * h / 3.0
}

fn simpson_coefficients(lambda: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let g = |x: f64| x * (lambda * (1.0 - x)).exp();
    let a = (0..=10)
        .map(|i| 2.0 / PI * simpson(|x| g(x) * (2.0 * i as f64 * x).cos(), 0.0, PI, n))
        .collect();
    let b = (1..=10)
        .map(|i| 2.0 / PI * simpson(|x| g(x) * (2.0 * i as f64 * x).sin(), 0.0, PI, n))
        .collect();
    (a, b)
}

#[test]
fn fourier_coefficients_agree_with_simpson() {
    let model = build_model_three(3.0).unwrap();
    let (a, b) = simpson_coefficients(3.0, 20_000);
    for (i, (got, want)) in model.a_coeffs.iter().zip(&a).enumerate() {
        assert!((got - want).abs() < 1e-8, "a_{i}: {got} vs {want}");
    }
    for (i, (got, want)) in model.b_coeffs.iter().zip(&b).enumerate() {
        assert!((got - want).abs() < 1e-8, "b_{}: {got} vs {want}", i + 1);
    }
}

#[test]
fn simpson_reference_is_converged() {
    let (a1, b1) = simpson_coefficients(3.0, 20_000);
    let (a2, b2) = simpson_coefficients(3.0, 40_000);
    for (x, y) in a1.iter().chain(&b1).zip(a2.iter().chain(&b2)) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn fourier_a0_has_closed_form() {
    // (2/pi) int_0^pi x e^{l(1-x)} dx = (2/pi) e^l [1 - e^{-l pi}(1 + l pi)] / l^2
    let l: f64 = 3.0;
    let want = 2.0 / PI * l.exp() * (1.0 - (-l * PI).exp() * (1.0 + l * PI)) / (l * l);
    let got = build_model_three(l).unwrap().a_coeffs[0];
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

#[test]
fn model_one_coefficients_are_cut_taylor_terms() {
    let rounded = build_model_one(Rounding::HalfAwayFromZero);
    let truncated = build_model_one(Rounding::Truncate);
    for k in 0..=12u32 {
        let exact = 3f64.powi(k as i32) / factorial(k);
        let r = rounded.coefficient(k).unwrap();
        let t = truncated.coefficient(k).unwrap();
        assert!((r - exact).abs() <= 0.5e-3 + 1e-12, "k={k}: {r} vs {exact}");
        assert!(t <= exact + 1e-12 && exact - t < 1e-3, "k={k}: {t} vs {exact}");
        for c in [r, t] {
            assert!((c * 1e3 - (c * 1e3).round()).abs() < 1e-9, "k={k}: {c} has more than 3 decimals");
        }
    }
    assert_eq!(rounded.coefficient(13), None);
}

#[test]
fn model_two_coefficients_are_cut_taylor_terms() {
    let m = build_model_two(Rounding::HalfAwayFromZero);
    assert_eq!(m.coefficient(0), None);
    assert_eq!(m.coefficient(1), Some(-2.0));
    for k in 2..=8u32 {
        let exact = -3.0 / factorial(k);
        let c = m.coefficient(k).unwrap();
        assert!((c - exact).abs() <= 0.5e-4 + 1e-12, "k={k}: {c} vs {exact}");
    }
}

#[test]
fn models_track_the_system_near_the_fixed_point() {
    let system = RickerSystem { lambda: 3.0 };
    let bank = mmforecast::models::ModelBank::paper_default().unwrap();
    for model in bank.models() {
        for &x in &[0.8, 1.0, 1.2] {
            let d = (model.step(x).unwrap() - system.step(x).unwrap()).abs();
            assert!(d < 0.1, "model {} at {x}: error {d}", model.name());
        }
    }
}

#[test]
fn gaussian_ignorance_matches_entropy() {
    let sd = 0.3;
    let density = DressedDensity::new(vec![1.0], sd).unwrap();
    let normal = Normal::new(1.0, sd).unwrap();
    let mut rng = seed::rng(11);
    let n = 50_000;
    let p: Vec<f64> = (0..n).map(|_| density.pdf(normal.sample(&mut rng))).collect();
    let score = empirical_ignorance(&p).unwrap();
    // The score's standard deviation is 1/(sqrt 2 ln 2) bits per pair.
    let se = 1.0 / (2f64.sqrt() * std::f64::consts::LN_2) / (n as f64).sqrt();
    let want = gaussian_entropy_bits(sd);
    assert!((score.mean_bits - want).abs() < 4.0 * se, "{} vs {want}", score.mean_bits);
}

#[test]
fn ignorance_is_proper_for_a_mixture() {
    let truth = DressedDensity::new(vec![-0.5, 0.2, 0.4], 0.15).unwrap();
    let mut rng = seed::rng(12);
    let noise = Normal::new(0.0, 0.15).unwrap();
    let ys: Vec<f64> = (0..40_000)
        .map(|_| truth.centers()[rng.random_range(0..3)] + noise.sample(&mut rng))
        .collect();
    let mean = |d: &DressedDensity| {
        empirical_ignorance(&ys.iter().map(|&y| d.pdf(y)).collect::<Vec<_>>())
            .unwrap()
            .mean_bits
    };
    let best = mean(&truth);
    for sigma in [0.1, 0.12, 0.18, 0.25] {
        let other = DressedDensity::new(truth.centers().to_vec(), sigma).unwrap();
        assert!(mean(&other) > best, "sigma {sigma} scored better than the truth");
    }
    let shifted = DressedDensity::new(vec![-0.45, 0.25, 0.45], 0.15).unwrap();
    assert!(mean(&shifted) > best);
}

#[test]
fn perfect_ensembles_recover_the_dressing_width() {
    let (n_pairs, n_members, sigma) = (2000, 8, 0.05);
    let mut rng = seed::rng(13);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut members = Vec::with_capacity(n_pairs * n_members);
    let mut outcomes = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let ens: Vec<f64> = (0..n_members).map(|_| rng.random_range(0.0..3.0)).collect();
        outcomes.push(ens[rng.random_range(0..n_members)] + noise.sample(&mut rng));
        members.extend(ens);
    }
    let climo_sample: Vec<f64> = (0..4096).map(|_| rng.random_range(0.0..3.0)).collect();
    let climo = Climatology::from_sample(climo_sample).unwrap();
    let pairs = PairSet::with_climatology(n_members, members, outcomes, &climo).unwrap();
    let fit = fit_sigma_alpha(&pairs, &FitConfig::default()).unwrap();
    assert!((fit.sigma / sigma - 1.0).abs() < 0.1, "sigma {}", fit.sigma);
    assert!(fit.alpha > 0.95, "alpha {}", fit.alpha);
}

#[test]
fn lyapunov_exponent_of_a_stable_map_is_the_log_slope() {
    // For lambda < 2 the orbit settles on x = 1, where the derivative is 1 - lambda.
    let est = chaos::lyapunov_exponent(1.5, 20_000, 3).unwrap();
    assert!((est.exponent - 0.5f64.ln()).abs() < 1e-3, "{}", est.exponent);
}
