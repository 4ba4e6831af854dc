//! Subcommand implementations. Each writes its tables under the output
//! directory and finishes with `manifest.json`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};

use rand::Rng;
use rayon::prelude::*;
use serde_json::json;

use mmforecast::chaos::{self, SystemParams};
use mmforecast::experiment::{
    self, fraction_not_worse, resolve_noise_sd, ExperimentReport, Laboratory, MultiModelComparison,
};
use mmforecast::models::{self, Dynamics, ModelBank};
use mmforecast::output::fmt_f64;
use mmforecast::seed::{self, stream};
use mmforecast::stats;

use crate::config::RunConfig;
use crate::{Command, Failure};

type Outcome<T = ()> = Result<T, Failure>;

/// Lambda ranges of the two Lyapunov panels.
const LYAPUNOV_PANELS: [(&str, f64, f64); 2] = [("a", 2.95, 3.05), ("b", 2.999, 3.001)];
/// Points on the state axis for the model dynamics curves.
const DYNAMICS_POINTS: usize = 601;
const DYNAMICS_RANGE: (f64, f64) = (0.0, 3.0);

fn compute(e: mmforecast::Error) -> Failure {
    match e {
        mmforecast::Error::Io(_) | mmforecast::Error::Csv(_) | mmforecast::Error::Json(_) => {
            Failure::Write(e.to_string())
        }
        other => Failure::Compute(other.to_string()),
    }
}

/// Output files and run facts gathered for the manifest.
struct Run<'a> {
    cfg: &'a RunConfig,
    files: Vec<String>,
    facts: BTreeMap<String, serde_json::Value>,
}

impl<'a> Run<'a> {
    fn create(&mut self, name: &str) -> Outcome<BufWriter<File>> {
        let path = self.cfg.out.join(name);
        let f = File::create(&path).map_err(|e| Failure::Write(format!("{}: {e}", path.display())))?;
        self.files.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    /// Creates `name` and fills it with `body`.
    fn write<F>(&mut self, name: &str, body: F) -> Outcome
    where
        F: FnOnce(&mut BufWriter<File>) -> mmforecast::Result<()>,
    {
        let mut w = self.create(name)?;
        body(&mut w).map_err(|e| match e {
            mmforecast::Error::Io(_) | mmforecast::Error::Csv(_) => {
                Failure::Write(format!("{name}: {e}"))
            }
            other => compute(other),
        })?;
        w.flush().map_err(|e| Failure::Write(format!("{name}: {e}")))
    }

    fn fact(&mut self, key: &str, value: serde_json::Value) {
        self.facts.insert(key.to_string(), value);
    }
}

pub fn run(command: Command, cfg: &RunConfig) -> Outcome {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| Failure::Write(format!("{}: {e}", cfg.out.display())))?;
    let mut run = Run {
        cfg,
        files: Vec::new(),
        facts: BTreeMap::new(),
    };
    match command {
        Command::Simulate => simulate(&mut run)?,
        Command::Lyapunov => lyapunov(&mut run)?,
        Command::Modelerr => model_errors(&mut run)?,
        Command::Kappa => kappa(&mut run, &laboratory(cfg)?)?,
        Command::Enssize => ensemble_size(&mut run, &laboratory(cfg)?)?,
        Command::Lap => {
            let lab = laboratory(cfg)?;
            lap(&mut run, &lab)?;
        }
        Command::Sap => {
            let lab = laboratory(cfg)?;
            let l = lap(&mut run, &lab)?;
            sap(&mut run, &lab, &l)?;
        }
        Command::Compare => {
            let lab = laboratory(cfg)?;
            let l = lap(&mut run, &lab)?;
            let s = sap(&mut run, &lab, &l)?;
            compare(&mut run, &l, &s)?;
        }
        Command::All => {
            simulate(&mut run)?;
            lyapunov(&mut run)?;
            model_errors(&mut run)?;
            let lab = laboratory(cfg)?;
            kappa(&mut run, &lab)?;
            ensemble_size(&mut run, &lab)?;
            let l = lap(&mut run, &lab)?;
            let s = sap(&mut run, &lab, &l)?;
            compare(&mut run, &l, &s)?;
        }
    }
    manifest(run, command)
}

fn manifest(mut run: Run<'_>, command: Command) -> Outcome {
    let cfg = run.cfg;
    let master = cfg.experiment.seed;
    let streams = [
        ("climatology", stream::CLIMATOLOGY),
        ("noise_scale", stream::NOISE_SCALE),
        ("kappa", stream::KAPPA),
        ("test_archive", stream::TEST_ARCHIVE),
        ("lap", stream::LAP),
        ("sap", stream::SAP),
        ("ensemble_size", stream::ENSEMBLE_SIZE),
        ("kappa_sweep", stream::KAPPA_SWEEP),
        ("lyapunov", stream::LYAPUNOV),
        ("model_error", stream::MODEL_ERROR),
        ("simulate", stream::SIMULATE),
    ];
    let seeds: BTreeMap<&str, u64> = streams
        .iter()
        .map(|&(name, tag)| (name, seed::derive(master, &[tag])))
        .collect();
    let mut files = run.files.clone();
    files.push("manifest.json".into());
    files.sort();
    let doc = json!({
        "tool": "mmforecast",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command.name(),
        "config": cfg,
        "master_seed": master,
        "stream_seeds": seeds,
        "results": run.facts,
        "files": files,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Failure::Write(e.to_string()))?;
    let mut w = run.create("manifest.json")?;
    writeln!(w, "{text}")
        .and_then(|_| w.flush())
        .map_err(|e| Failure::Write(format!("manifest.json: {e}")))
}

fn laboratory(cfg: &RunConfig) -> Outcome<Laboratory> {
    eprintln!("building laboratory (climatology, kappa per model, test archive)...");
    Laboratory::new(cfg.experiment.clone()).map_err(compute)
}

fn simulate(run: &mut Run<'_>) -> Outcome {
    let e = &run.cfg.experiment;
    let noise_sd = resolve_noise_sd(e).map_err(compute)?;
    let system = SystemParams::new(e.lambda, noise_sd, e.spinup_steps).map_err(compute)?;
    let s = seed::derive(e.seed, &[stream::SIMULATE]);
    let x0 = chaos::random_initial_state(seed::derive(s, &[stream::INITIAL_STATE]));
    let traj = chaos::generate_trajectory(&system, x0, run.cfg.length).map_err(compute)?;
    let obs = chaos::observe(&traj, noise_sd, seed::derive(s, &[stream::OBSERVATION])).map_err(compute)?;
    run.write("simulate.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["t", "state", "observation"])?;
        for (i, (x, y)) in traj.states.iter().zip(&obs.observations).enumerate() {
            c.write_record([(traj.start_index + i as i64).to_string(), fmt_f64(*x), fmt_f64(*y)])?;
        }
        c.flush()?;
        Ok(())
    })?;
    println!(
        "simulate: {} steps after {} spin-up, noise sd {:.5}, state mean {:.5}, sd {:.5}",
        traj.states.len(),
        e.spinup_steps,
        noise_sd,
        stats::mean(&traj.states),
        stats::std_dev(&traj.states)
    );
    run.fact("noise_sd", json!(noise_sd));
    Ok(())
}

fn lyapunov(run: &mut Run<'_>) -> Outcome {
    let cfg = run.cfg;
    let s = seed::derive(cfg.experiment.seed, &[stream::LYAPUNOV]);
    let mut rows = Vec::new();
    for (p, &(panel, lo, hi)) in LYAPUNOV_PANELS.iter().enumerate() {
        let mut rng = seed::rng(seed::derive(s, &[p as u64]));
        let mut lambdas: Vec<f64> = (0..cfg.lyapunov_points).map(|_| rng.random_range(lo..hi)).collect();
        lambdas.sort_by(f64::total_cmp);
        let estimates = lambdas
            .par_iter()
            .enumerate()
            .map(|(i, &l)| chaos::lyapunov_exponent(l, cfg.lyapunov_steps, seed::derive(s, &[p as u64, i as u64])))
            .collect::<Result<Vec<_>, _>>()
            .map_err(compute)?;
        rows.extend(lambdas.into_iter().zip(estimates).map(|(l, est)| (panel, l, est)));
    }
    run.write("fig1_lyapunov.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["panel", "lambda", "exponent", "n_steps", "degenerate_steps"])?;
        for (panel, l, est) in &rows {
            c.write_record([
                panel.to_string(),
                fmt_f64(*l),
                fmt_f64(est.exponent),
                est.n_steps.to_string(),
                est.degenerate_steps.to_string(),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;
    let lambda = cfg.experiment.lambda;
    let check = chaos::lyapunov_exponent(lambda, cfg.lyapunov_check_steps, seed::derive(s, &[LYAPUNOV_PANELS.len() as u64]))
        .map_err(compute)?;
    println!(
        "lyapunov exponent at lambda={lambda}: {:.6} nats/step ({} steps)",
        check.exponent, check.n_steps
    );
    for &(panel, lo, hi) in &LYAPUNOV_PANELS {
        let xs: Vec<f64> = rows.iter().filter(|r| r.0 == panel).map(|r| r.2.exponent).collect();
        let negative = xs.iter().filter(|&&x| x < 0.0).count();
        println!(
            "  panel {panel}: lambda in [{lo}, {hi}], {} estimates, mean {:.4}, {} negative",
            xs.len(),
            stats::mean(&xs),
            negative
        );
    }
    run.fact("lyapunov_exponent", json!({"lambda": lambda, "exponent": check.exponent, "n_steps": check.n_steps}));
    Ok(())
}

fn model_errors(run: &mut Run<'_>) -> Outcome {
    let e = &run.cfg.experiment;
    let bank = ModelBank::new(e.lambda, e.delta, e.rounding).map_err(compute)?;
    let table = bank.coefficient_table();
    run.write("coefficients.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["model", "term", "coefficient"])?;
        for (id, term, v) in &table {
            c.write_record([id.to_string(), term.clone(), fmt_f64(*v)])?;
        }
        c.flush()?;
        Ok(())
    })?;

    let system = chaos::RickerSystem { lambda: e.lambda };
    let mut named: Vec<(String, &dyn Dynamics)> = vec![("system".into(), &system)];
    named.extend(bank.models().iter().map(|m| (m.name(), m as &dyn Dynamics)));
    let (lo, hi) = DYNAMICS_RANGE;
    let grid: Vec<f64> = (0..DYNAMICS_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (DYNAMICS_POINTS - 1) as f64)
        .collect();
    let error_seed = models::model_error_seed(e.seed);
    for (steps, curve_file, error_file) in [(1, "fig2_dynamics.csv", "fig3_errors.csv"), (2, "fig4_dynamics.csv", "fig5_errors.csv")] {
        run.write(curve_file, |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["model", "x", "value"])?;
            for (name, m) in &named {
                for &x in &grid {
                    c.write_record([name.clone(), fmt_f64(x), fmt_f64(m.iterate(x, steps)?)])?;
                }
            }
            c.flush()?;
            Ok(())
        })?;
        let mut summary = Vec::new();
        let mut errors = Vec::new();
        for m in bank.models() {
            let errs = models::model_error_histogram(m, e.lambda, run.cfg.error_points, steps, error_seed)
                .map_err(compute)?;
            let abs: Vec<f64> = errs.iter().map(|r| r.error.abs()).collect();
            let below = errs.iter().filter(|r| r.error < 0.0).count();
            summary.push((m.name(), stats::mean(&abs), stats::percentile(&abs, 100.0), below, errs.len()));
            errors.push((m.name(), errs));
        }
        run.write(error_file, |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["model", "initial_condition", "model_value", "system_value", "error"])?;
            for (name, errs) in &errors {
                for r in errs {
                    c.write_record([
                        name.clone(),
                        fmt_f64(r.initial_condition),
                        fmt_f64(r.model_value),
                        fmt_f64(r.system_value),
                        fmt_f64(r.error),
                    ])?;
                }
            }
            c.flush()?;
            Ok(())
        })?;
        println!("{steps}-step model errors over {} initial conditions:", run.cfg.error_points);
        println!("  {:<6} {:>12} {:>12} {:>10}", "model", "mean |err|", "max |err|", "negative");
        for (name, mean, max, below, n) in summary {
            println!("  {name:<6} {mean:>12.3e} {max:>12.3e} {:>9.1}%", 100.0 * below as f64 / n as f64);
        }
    }
    Ok(())
}

fn record_lab(run: &mut Run<'_>, lab: &Laboratory) {
    let kappa: Vec<_> = lab
        .model_names()
        .iter()
        .zip(&lab.kappa)
        .map(|(name, k)| {
            json!({"model": name, "kappa": k.kappa, "validation_ignorance": k.validation_ignorance, "at_bound": k.at_bound})
        })
        .collect();
    run.fact("noise_sd", json!(lab.noise_sd()));
    run.fact("kappa", json!(kappa));
    run.fact("climatology_bandwidth", json!(lab.climatology.bandwidth()));
    run.fact("climatology_test_ignorance", json!(lab.climatology_test_ignorance));
}

fn kappa(run: &mut Run<'_>, lab: &Laboratory) -> Outcome {
    record_lab(run, lab);
    eprintln!("sweeping kappa per model and lead...");
    let sweep = lab.run_kappa_sweep().map_err(compute)?;
    run.write("fig6_kappa.csv", |w| experiment::write_fig6(w, &sweep))?;
    println!("best kappa by lead (noise sd {:.4}):", lab.noise_sd());
    print_lead_table(&sweep.model_names, lab.config.max_lead, |m, l| {
        sweep.row(m, l).map_or(f64::NAN, |r| r.kappa)
    });
    println!("test Ignorance at best kappa (bits):");
    print_lead_table(&sweep.model_names, lab.config.max_lead, |m, l| {
        sweep.row(m, l).map_or(f64::NAN, |r| r.ignorance)
    });
    print_row("clim", 6, &sweep.climatology);
    Ok(())
}

fn ensemble_size(run: &mut Run<'_>, lab: &Laboratory) -> Outcome {
    record_lab(run, lab);
    eprintln!("sweeping ensemble size...");
    let sizes = lab.config.ensemble_sizes.clone();
    let rows = lab.run_ensemble_size_sweep(&sizes).map_err(compute)?;
    let names = lab.model_names();
    run.write("fig7_enssize.csv", |w| {
        experiment::write_fig7(w, &names, &rows, &lab.climatology_test_ignorance)
    })?;
    println!("lead-1 test Ignorance by ensemble size (bits):");
    print!("  {:<6}", "model");
    for s in &sizes {
        print!(" {s:>8}");
    }
    println!();
    for (m, name) in names.iter().enumerate() {
        let vals: Vec<f64> = sizes
            .iter()
            .map(|&s| {
                rows.iter()
                    .find(|r| r.model == m && r.size == s && r.lead == 1)
                    .map_or(f64::NAN, |r| r.ignorance)
            })
            .collect();
        print_row(name, 6, &vals);
    }
    Ok(())
}

fn record_report(run: &mut Run<'_>, r: &ExperimentReport) {
    let label = r.kind.label();
    run.fact(&format!("{label}_archives_fitted"), json!(r.results.len()));
    run.fact(&format!("{label}_failures"), json!(r.failures.len()));
    let details: Vec<_> = r.failures.iter().map(|(id, msg)| json!({"archive_id": id, "error": msg})).collect();
    run.fact(&format!("{label}_failure_details"), json!(details));
}

fn lap(run: &mut Run<'_>, lab: &Laboratory) -> Outcome<ExperimentReport> {
    record_lab(run, lab);
    eprintln!("fitting {} large archives...", lab.config.n_archives);
    let report = lab.run_lap();
    record_report(run, &report);
    if report.results.is_empty() {
        return Err(Failure::Compute("every large archive failed to fit".into()));
    }
    run.write("fig8_lap.csv", |w| experiment::write_fig8(w, &report))?;
    let fit = &lab.config.fit;
    let first = report.results[0].params.to_key_values(fit);
    run.write("lap_fitted_params.txt", |w| Ok(w.write_all(first.as_bytes())?))?;
    summarize(&report);
    Ok(report)
}

fn sap(run: &mut Run<'_>, lab: &Laboratory, lap: &ExperimentReport) -> Outcome<ExperimentReport> {
    eprintln!("fitting {} small archives...", lab.config.n_archives);
    let report = lab.run_sap();
    record_report(run, &report);
    if report.results.is_empty() {
        return Err(Failure::Compute("every small archive failed to fit".into()));
    }
    run.write("fig9_alpha_sap.csv", |w| experiment::write_fig9(w, &report, lap))?;
    run.write("fig10_sigma_sap.csv", |w| experiment::write_fig10(w, &report, lap))?;
    run.write("fig11_ign_sap.csv", |w| experiment::write_fig11(w, &report, lap))?;
    let first = report.results[0].params.to_key_values(&lab.config.fit);
    run.write("sap_fitted_params.txt", |w| Ok(w.write_all(first.as_bytes())?))?;
    summarize(&report);
    Ok(report)
}

fn compare(run: &mut Run<'_>, lap: &ExperimentReport, sap: &ExperimentReport) -> Outcome {
    let cmp = MultiModelComparison::new(lap, sap).map_err(compute)?;
    run.write("fig12_mm_vs_best.csv", |w| experiment::write_fig12(w, &cmp))?;
    println!("fraction of archives where the multi-model is no worse than the single best:");
    let names: Vec<String> = cmp.pairings().iter().map(|(n, _)| n.to_string()).collect();
    print_lead_table(&names, cmp.max_lead, |p, l| fraction_not_worse(&cmp.pairings()[p].1[l - 1]));
    let fractions: BTreeMap<&str, Vec<f64>> = cmp
        .pairings()
        .iter()
        .map(|(n, d)| (*n, d.iter().map(|xs| fraction_not_worse(xs)).collect()))
        .collect();
    run.fact("fraction_multimodel_not_worse", json!(fractions));
    Ok(())
}

fn summarize(r: &ExperimentReport) {
    println!(
        "{}: {} archives of {} pairs fitted, {} failed; median test Ignorance (bits):",
        r.kind.label().to_uppercase(),
        r.results.len(),
        r.archive_size,
        r.failures.len()
    );
    let mut names = r.model_names.clone();
    names.push("multi".into());
    print_lead_table(&names, r.max_lead, |m, l| {
        let xs = if m < r.n_models() { r.test_ignorance(m, l) } else { r.mm_test_ignorance(l) };
        stats::percentile(&xs, 50.0)
    });
    print_row("clim", 6, &r.climatology_test_ignorance);
}

fn print_lead_table(names: &[String], max_lead: usize, value: impl Fn(usize, usize) -> f64) {
    let width = names.iter().map(|n| n.len()).max().unwrap_or(0).max(6);
    print!("  {:<width$}", "lead");
    for l in 1..=max_lead {
        print!(" {l:>8}");
    }
    println!();
    for (m, name) in names.iter().enumerate() {
        let vals: Vec<f64> = (1..=max_lead).map(|l| value(m, l)).collect();
        print_row(name, width, &vals);
    }
}

fn print_row(name: &str, width: usize, vals: &[f64]) {
    print!("  {name:<width$}");
    for v in vals {
        print!(" {v:>8.4}");
    }
    println!();
}
