//! Invariants that must hold for any admissible input.

use mmforecast::calibration::{fit_weights_iterative, FitConfig};
use mmforecast::density::{blend, ignorance, total_mass, Climatology, Density, DressedDensity, WeightVector};
use mmforecast::ensemble::make_ensemble;
use mmforecast::seed;
use proptest::prelude::*;
use rand::Rng;

fn climatology() -> Climatology {
    let mut rng = seed::rng(5);
    Climatology::from_sample((0..2048).map(|_| rng.random_range(0.0..3.0)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dressed_density_has_unit_mass(
        centers in prop::collection::vec(-5.0f64..5.0, 1..12),
        sigma in 1e-3f64..2.0,
    ) {
        let d = DressedDensity::new(centers, sigma).unwrap();
        let mass = total_mass(&d, 1e-9).unwrap();
        prop_assert!((mass - 1.0).abs() < 1e-6, "mass {}", mass);
    }

    #[test]
    fn blend_lies_between_its_parts(alpha in 0.0f64..=1.0, pm in 0.0f64..50.0, pc in 0.0f64..50.0) {
        let b = blend(alpha, pm, pc);
        prop_assert!(b >= pm.min(pc) - 1e-12 && b <= pm.max(pc) + 1e-12);
    }

    #[test]
    fn ignorance_decreases_with_density(p in 1e-300f64..1e3, factor in 1.0001f64..100.0) {
        prop_assert!(ignorance(p * factor).unwrap() < ignorance(p).unwrap());
    }

    #[test]
    fn convex_weights_combine_within_range(
        raw in prop::collection::vec(0.01f64..1.0, 1..6),
        values in prop::collection::vec(0.0f64..10.0, 6),
    ) {
        let sum: f64 = raw.iter().sum();
        let mut omega: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let last = omega.len() - 1;
        omega[last] = 1.0 - omega[..last].iter().sum::<f64>();
        let w = WeightVector::new(omega).unwrap();
        let v = &values[..w.len()];
        let c = w.combine(v);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(c >= lo - 1e-12 && c <= hi + 1e-12);
    }

    #[test]
    fn ensembles_are_positive_and_reproducible(
        obs in 0.01f64..3.0,
        kappa in 1e-4f64..1.0,
        n in 1usize..64,
        s in any::<u64>(),
    ) {
        let a = make_ensemble(obs, n, kappa, s).unwrap();
        prop_assert_eq!(a.len(), n);
        prop_assert!(a.iter().all(|&x| x > 0.0 && x.is_finite()));
        prop_assert_eq!(a, make_ensemble(obs, n, kappa, s).unwrap());
    }

    #[test]
    fn fitted_weights_form_a_simplex(
        dens in prop::collection::vec(prop::collection::vec(1e-3f64..5.0, 20), 1..4),
    ) {
        let fit = fit_weights_iterative(&dens, &FitConfig::default()).unwrap();
        let w = fit.weights.as_slice();
        prop_assert_eq!(w.len(), dens.len());
        prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seed_derivation_separates_paths(s in any::<u64>(), a in 0u64..1000, b in 0u64..1000) {
        prop_assume!(a != b);
        prop_assert_ne!(seed::derive(s, &[a]), seed::derive(s, &[b]));
    }
}

#[test]
fn climatology_mass_is_one() {
    let c = climatology();
    assert!((total_mass(&c, 1e-9).unwrap() - 1.0).abs() < 1e-6);
    assert!(c.pdf(1.0) > 0.0);
}
