//! Acceptance criteria 1-11. Each test prints one `criterion N: PASS|FAIL`
//! line with the measured quantities before asserting.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;

use mmforecast::calibration::fit_weights_iterative;
use mmforecast::calibration::FitConfig;
use mmforecast::chaos::{self, lyapunov_exponent};
use mmforecast::density::{
    ignorance, total_mass, BlendedDensity, Climatology, Density, DressedDensity, MultiModelDensity,
    WeightVector,
};
use mmforecast::experiment::{
    fraction_not_worse, ExperimentConfig, ExperimentReport, Laboratory, MultiModelComparison,
};
use mmforecast::models::{build_model_one, build_model_two, ModelBank, ModelId, Rounding};
use mmforecast::seed;
use mmforecast::stats::Summary;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn report(n: u32, pass: bool, detail: &str) {
    println!("criterion {n}: {} - {detail}", if pass { "PASS" } else { "FAIL" });
}

#[test]
fn criterion_01_exact_analytic_checks() {
    let bank = ModelBank::paper_default().unwrap();
    let checks = [
        ("step(1, 3)", chaos::step(1.0, 3.0).unwrap(), 1.0),
        ("model I at 1", bank.model_step(ModelId::I, 1.0).unwrap(), 1.0),
        ("model II at 1", bank.model_step(ModelId::II, 1.0).unwrap(), 1.0),
        ("model IV at 1", bank.model_step(ModelId::IV, 1.0).unwrap(), (-0.06f64).exp()),
    ];
    let worst = checks.iter().map(|(_, got, want)| (got - want).abs()).fold(0.0, f64::max);
    let ign = ignorance(0.5).unwrap();
    let pass = worst <= 1e-12 && ign == 1.0;
    report(1, pass, &format!("max deviation {worst:.1e}, Ignorance(0.5) = {ign}"));
    assert!(pass, "{checks:?}");
}

#[test]
fn criterion_02_coefficient_fidelity() {
    let one = build_model_one(Rounding::default());
    let two = build_model_two(Rounding::default());
    let got = [
        one.coefficient(1),
        one.coefficient(2),
        one.coefficient(12),
        two.coefficient(1),
        two.coefficient(2),
        two.coefficient(8),
    ];
    let want = [3.0, 4.5, 0.001, -2.0, -1.5, -0.0001];
    let pass = got.iter().zip(want).all(|(g, w)| *g == Some(w));
    report(2, pass, &format!("I k=1,2,12 and II k=1,2,8: {got:?}"));
    assert!(pass);
}

#[test]
fn criterion_03_lyapunov_positive_and_seed_stable() {
    let est: Vec<f64> = (0..5)
        .map(|s| lyapunov_exponent(3.0, 1_000_000, seed::derive(77, &[s])).unwrap().exponent)
        .collect();
    let lo = est.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = est.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pass = lo > 0.0 && hi - lo < 0.01;
    report(3, pass, &format!("5 seeds: min {lo:.5}, spread {:.5} nats/step", hi - lo));
    assert!(pass);
}

fn random_climatology(rng: &mut seed::Rng) -> Climatology {
    let centers: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..3.0)).collect();
    let sample = (0..2048)
        .map(|i| {
            let c = centers[i % 3];
            c + Normal::new(0.0, rng.random_range(0.05..0.5)).unwrap().sample(rng)
        })
        .collect();
    Climatology::from_sample(sample).unwrap()
}

fn random_dressed(rng: &mut seed::Rng) -> DressedDensity {
    let n = rng.random_range(1..=32);
    let centers = (0..n).map(|_| rng.random_range(-1.0..4.0)).collect();
    DressedDensity::new(centers, 10f64.powf(rng.random_range(-3.0..0.0))).unwrap()
}

#[test]
fn criterion_04_densities_integrate_to_one() {
    let mut rng = seed::rng(4);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |kind, d: &dyn Density| {
        let err = (total_mass(d, 1e-10).unwrap() - 1.0).abs();
        let w = worst.entry(kind).or_insert(0.0);
        *w = w.max(err);
    };
    for _ in 0..100 {
        let climo = random_climatology(&mut rng);
        let dressed = random_dressed(&mut rng);
        note("dressed", &dressed);
        note("climatology", &climo);
        note("blended", &BlendedDensity::new(random_dressed(&mut rng), &climo, rng.random_range(0.0..=1.0)).unwrap());
        let k = rng.random_range(2..=4);
        let parts: Vec<_> = (0..k)
            .map(|_| BlendedDensity::new(random_dressed(&mut rng), &climo, rng.random_range(0.0..=1.0)).unwrap())
            .collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let rest: f64 = w[1..].iter().sum();
        w[0] = 1.0 - rest;
        note("multi-model", &MultiModelDensity::new(parts, WeightVector::new(w).unwrap()).unwrap());
    }
    let max = worst.values().copied().fold(0.0, f64::max);
    let pass = max < 1e-6;
    report(4, pass, &format!("100 instances each, max |mass - 1|: {worst:?}"));
    assert!(pass);
}

#[test]
fn criterion_05_propriety() {
    let (mu, sd) = (1.0, 0.3);
    let normal = Normal::new(mu, sd).unwrap();
    let mut rng = seed::rng(5);
    let ys: Vec<f64> = (0..100_000).map(|_| normal.sample(&mut rng)).collect();
    let gauss = |m: f64, s: f64| move |y: f64| (-0.5 * ((y - m) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
    let truth = gauss(mu, sd);
    let alternatives = [(mu + 0.05, sd), (mu - 0.1, sd), (mu, sd * 1.1), (mu, sd * 0.9), (mu + 0.05, sd * 1.2)];
    let mut margins = Vec::new();
    for &(m, s) in &alternatives {
        let alt = gauss(m, s);
        let d: Vec<f64> = ys.iter().map(|&y| ignorance(alt(y)).unwrap() - ignorance(truth(y)).unwrap()).collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let se = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt();
        margins.push(mean / se);
    }
    let pass = margins.iter().all(|&z| z > 3.0);
    report(5, pass, &format!("Ignorance excess over truth in standard errors: {margins:.1?}"));
    assert!(pass);
}

struct Experiments {
    lap: ExperimentReport,
    sap: ExperimentReport,
}

fn experiments() -> &'static Experiments {
    static CELL: OnceLock<Experiments> = OnceLock::new();
    CELL.get_or_init(|| {
        let lab = Laboratory::new(ExperimentConfig::desk()).unwrap();
        Experiments {
            lap: lab.run_lap(),
            sap: lab.run_sap(),
        }
    })
}

fn cells(r: &ExperimentReport) -> impl Iterator<Item = (usize, usize)> + '_ {
    (0..r.n_models()).flat_map(move |m| (1..=r.max_lead).map(move |l| (m, l)))
}

#[test]
fn criterion_06_lap_stability() {
    let lap = &experiments().lap;
    assert_eq!(lap.results.len(), 64, "failures: {:?}", lap.failures);
    let mut worst_alpha = (0.0, 0, 0);
    let mut worst_ign = (0.0, 0, 0);
    for (m, l) in cells(lap) {
        let a = Summary::of(&lap.alpha(m, l)).unwrap().width90();
        let i = Summary::of(&lap.test_ignorance(m, l)).unwrap().width90();
        if a > worst_alpha.0 {
            worst_alpha = (a, m, l);
        }
        if i > worst_ign.0 {
            worst_ign = (i, m, l);
        }
    }
    let pass = worst_alpha.0 < 0.15 && worst_ign.0 < 0.1;
    report(
        6,
        pass,
        &format!(
            "widest 90% range: alpha {:.4} (model {}, lead {}), test Ignorance {:.4} bits (model {}, lead {})",
            worst_alpha.0,
            lap.model_names[worst_alpha.1],
            worst_alpha.2,
            worst_ign.0,
            lap.model_names[worst_ign.1],
            worst_ign.2
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_sap_spread() {
    let Experiments { lap, sap } = experiments();
    let mut wide = 0;
    let mut total = 0;
    for (m, l) in cells(sap) {
        let s = Summary::of(&sap.alpha(m, l)).unwrap().iqr();
        let b = Summary::of(&lap.alpha(m, l)).unwrap().iqr();
        total += 1;
        if s > 0.0 && s >= 3.0 * b {
            wide += 1;
        }
    }
    let pass = 2 * wide > total;
    report(7, pass, &format!("SAP alpha IQR >= 3x LAP IQR in {wide} of {total} (model, lead) cells"));
    assert!(pass);
}

#[test]
fn criterion_08_sap_skill_loss() {
    let Experiments { lap, sap } = experiments();
    let mean = |xs: Vec<f64>| xs.iter().sum::<f64>() / xs.len() as f64;
    let mut per_model = Vec::new();
    for m in 0..sap.n_models() {
        let loss = (1..=sap.max_lead)
            .map(|l| mean(sap.test_ignorance(m, l)) - mean(lap.test_ignorance(m, l)))
            .fold(f64::NEG_INFINITY, f64::max);
        per_model.push(loss);
    }
    let last = sap.max_lead;
    let climo = sap.climatology_test_ignorance[last - 1];
    let worse: usize = (0..sap.n_models())
        .map(|m| sap.test_ignorance(m, last).iter().filter(|&&x| x > climo).count())
        .sum();
    let pass = per_model.iter().all(|&d| d > 0.25) && worse > 0;
    report(
        8,
        pass,
        &format!(
            "largest mean SAP-LAP Ignorance gap per model {per_model:.3?} bits; {worse} (archive, model) scores worse than climatology at lead {last}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_multimodel_vs_best() {
    let Experiments { lap, sap } = experiments();
    let cmp = MultiModelComparison::new(lap, sap).unwrap();
    let pooled: Vec<f64> = cmp.lap_vs_lap.iter().flatten().copied().collect();
    let lap_frac = fraction_not_worse(&pooled);
    let n = cmp.max_lead;
    let drops: Vec<(usize, f64, f64)> = (n - 1..=n)
        .map(|l| {
            (
                l,
                fraction_not_worse(&cmp.lap_vs_lap[l - 1]),
                fraction_not_worse(&cmp.sap_mm_vs_lap_best[l - 1]),
            )
        })
        .collect();
    let pass = lap_frac > 0.6 && drops.iter().all(|&(_, lap, mixed)| mixed < lap);
    report(
        9,
        pass,
        &format!(
            "LAP multi-model no worse than best in {:.1}% of (archive, lead); (lead, LAP-vs-LAP, SAP-mm-vs-LAP-best) at longest leads: {drops:.3?}",
            100.0 * lap_frac
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_weight_fitting_guarantee() {
    let mut rng = seed::rng(10);
    let cfg = FitConfig::default();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let models = rng.random_range(2..=5);
        let k = rng.random_range(5..=200);
        let densities: Vec<Vec<f64>> = (0..models)
            .map(|_| (0..k).map(|_| 10f64.powf(rng.random_range(-4.0..1.0))).collect())
            .collect();
        let fit = fit_weights_iterative(&densities, &cfg).unwrap();
        let best = fit.individual_ignorance[fit.ranking[0]];
        worst = worst.max(fit.training_ignorance - best);
    }
    let pass = worst <= 0.0;
    report(10, pass, &format!("max (combined - rank-1) training Ignorance over 100 instances: {worst:.3e}"));
    assert!(pass);
}

fn run_all(out: &Path) {
    let status = Command::new(env!("CARGO_BIN_EXE_mmforecast"))
        .args(["all", "--scale", "desk", "--seed", "1", "--out"])
        .arg(out)
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success(), "{status}");
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn criterion_11_full_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_all(&a);
    run_all(&b);
    let (ta, tb) = (tree(&a), tree(&b));
    let differing: Vec<&String> = ta.keys().filter(|k| ta.get(*k) != tb.get(*k)).collect();
    let pass = !ta.is_empty() && ta.keys().eq(tb.keys()) && differing.is_empty();
    report(11, pass, &format!("{} files compared, differing: {differing:?}", ta.len()));
    assert!(pass);
    for name in [
        "fig6_kappa.csv",
        "fig7_enssize.csv",
        "fig8_lap.csv",
        "fig9_alpha_sap.csv",
        "fig10_sigma_sap.csv",
        "fig11_ign_sap.csv",
        "fig12_mm_vs_best.csv",
        "manifest.json",
    ] {
        assert!(ta.contains_key(name), "missing {name}");
    }
}
