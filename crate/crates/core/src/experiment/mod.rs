//! Monte Carlo experiments comparing forecast systems fitted on large (LAP)
//! and small (SAP) forecast-outcome archives.
//!
//! Every random stream is derived from the master seed by
//! [`seed::derive`](crate::seed::derive) keyed on the experiment stream and
//! archive index, so results do not depend on the parallel schedule.

mod archive;
mod report;
mod sweeps;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use archive::{build_archive, build_launches, Archive, LaunchSet};
pub use report::{
    write_fig11, write_fig12, write_fig6, write_fig7, write_fig8, write_fig9, write_fig10,
    fraction_not_worse, ArchiveKind, ArchiveResult, ExperimentReport, MultiModelComparison,
};
pub use sweeps::{EnsembleSizeRow, KappaSweep, KappaSweepRow};

use crate::calibration::{
    self, fit_loo, fit_sigma_alpha, held_out_densities, fit_weights_iterative, FitConfig, FittedParams, KappaFit,
    PairSet, SigmaAlphaFit,
};
use crate::chaos::{self, SystemParams};
use crate::density::{ignorance_bits, Climatology};
use crate::error::{Error, Result};
use crate::models::{Dynamics, ModelBank, Rounding, DEFAULT_DELTA};
use crate::seed::{self, stream};

/// Noise standard deviation as a fraction of the attractor's spread.
pub const DEFAULT_NOISE_FRACTION: f64 = 0.05;
/// Steps used to estimate the attractor's spread.
pub const NOISE_SCALE_STEPS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub lambda: f64,
    /// Observational noise; `None` scales it to the attractor.
    pub noise_sd: Option<f64>,
    pub noise_fraction: f64,
    pub spinup_steps: usize,
    pub delta: f64,
    pub rounding: Rounding,
    pub n_archives: usize,
    pub lap_size: usize,
    pub sap_size: usize,
    pub test_size: usize,
    pub n_members: usize,
    pub max_lead: usize,
    pub climatology_size: usize,
    /// Lead-1 launches used to choose each model's kappa.
    pub kappa_launches: usize,
    /// Fixed per-model kappa; skips fitting when set.
    pub kappa: Option<Vec<f64>>,
    /// Spacing between launches; `None` uses `max_lead`.
    pub launch_stride: Option<usize>,
    pub ensemble_sizes: Vec<usize>,
    /// Fit SAP weights on leave-one-out densities.
    pub sap_loo_weights: bool,
    pub seed: u64,
    pub fit: FitConfig,
}

impl ExperimentConfig {
    /// Paper-scale settings.
    pub fn full() -> Self {
        Self {
            lambda: chaos::DEFAULT_LAMBDA,
            noise_sd: None,
            noise_fraction: DEFAULT_NOISE_FRACTION,
            spinup_steps: chaos::DEFAULT_SPINUP,
            delta: DEFAULT_DELTA,
            rounding: Rounding::default(),
            n_archives: 512,
            lap_size: 2048,
            sap_size: 40,
            test_size: 2048,
            n_members: 9,
            max_lead: 8,
            climatology_size: 2048,
            kappa_launches: 2048,
            kappa: None,
            launch_stride: None,
            ensemble_sizes: vec![2, 4, 8, 16, 32, 64, 128, 256, 512, 1024],
            sap_loo_weights: true,
            seed: 1,
            fit: FitConfig::default(),
        }
    }

    /// Reduced counts for desk-top runs: 64 archives of 512 (LAP) or 40
    /// (SAP) pairs against a 2048-pair test archive.
    pub fn desk() -> Self {
        Self {
            n_archives: 64,
            lap_size: 512,
            kappa_launches: 1024,
            ensemble_sizes: vec![4, 8, 16, 32, 64],
            ..Self::full()
        }
    }

    pub fn stride(&self) -> usize {
        self.launch_stride.unwrap_or(self.max_lead)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_archives", self.n_archives),
            ("lap_size", self.lap_size),
            ("sap_size", self.sap_size),
            ("test_size", self.test_size),
            ("n_members", self.n_members),
            ("max_lead", self.max_lead),
            ("climatology_size", self.climatology_size),
            ("kappa_launches", self.kappa_launches),
            ("launch_stride", self.stride()),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidParameter(format!("{name} must be at least 1")));
        }
        if self.sap_size < 3 || self.lap_size < 2 {
            return Err(Error::InvalidParameter(
                "archives need at least 3 (SAP) and 2 (LAP) pairs".into(),
            ));
        }
        if let Some(k) = &self.kappa {
            if k.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidParameter(format!("kappa values must be positive: {k:?}")));
            }
        }
        if self.ensemble_sizes.is_empty()
            || self.ensemble_sizes.contains(&0)
            || self.ensemble_sizes.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::InvalidParameter(format!(
                "ensemble sizes must be positive and strictly ascending: {:?}",
                self.ensemble_sizes
            )));
        }
        if !(self.noise_fraction >= 0.0) {
            return Err(Error::InvalidParameter("noise_fraction must be non-negative".into()));
        }
        SystemParams::new(self.lambda, self.noise_sd.unwrap_or(0.0), self.spinup_steps)?;
        self.fit.validate()
    }
}

/// A named forecast model.
pub struct ModelSlot {
    pub name: String,
    pub dynamics: Box<dyn Dynamics>,
}

/// Shared state of every experiment: truth system, climatology, models with
/// their fitted kappa, and the common test archive.
pub struct Laboratory {
    pub config: ExperimentConfig,
    pub system: SystemParams,
    pub climatology: Climatology,
    pub models: Vec<ModelSlot>,
    pub kappa: Vec<KappaFit>,
    pub test: Archive,
    /// `test_pairs[model][lead - 1]`
    test_pairs: Vec<Vec<PairSet>>,
    /// Climatology's Ignorance on the test archive, per lead.
    pub climatology_test_ignorance: Vec<f64>,
}

impl Laboratory {
    /// Laboratory with the four imperfect models.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let bank = ModelBank::new(config.lambda, config.delta, config.rounding)?;
        let models = bank
            .models()
            .iter()
            .map(|m| ModelSlot {
                name: m.name(),
                dynamics: Box::new(m.clone()),
            })
            .collect();
        Self::with_models(config, models)
    }

    pub fn with_models(config: ExperimentConfig, models: Vec<ModelSlot>) -> Result<Self> {
        config.validate()?;
        if models.is_empty() {
            return Err(Error::InvalidParameter("need at least one model".into()));
        }
        let master = config.seed;
        let noise_sd = resolve_noise_sd(&config)?;
        let system = SystemParams::new(config.lambda, noise_sd, config.spinup_steps)?;

        let climo_seed = seed::derive(master, &[stream::CLIMATOLOGY]);
        let climatology = Climatology::from_sample(
            stationary_observations(&system, config.climatology_size, climo_seed)?,
        )?;

        let kappa = match &config.kappa {
            Some(k) if k.len() == models.len() => k
                .iter()
                .map(|&kappa| KappaFit {
                    kappa,
                    validation_ignorance: f64::NAN,
                    at_bound: false,
                })
                .collect(),
            Some(k) => {
                return Err(Error::InvalidParameter(format!(
                    "{} kappa values for {} models",
                    k.len(),
                    models.len()
                )))
            }
            None => {
                let kseed = seed::derive(master, &[stream::KAPPA]);
                let obs = stationary_observations(&system, config.kappa_launches + 1, kseed)?;
                models
                    .iter()
                    .map(|m| {
                        calibration::fit_kappa(
                            m.dynamics.as_ref(),
                            &obs,
                            &climatology,
                            config.n_members,
                            &config.fit,
                            seed::derive(kseed, &[stream::ENSEMBLE]),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };

        let launches = build_launches(
            &system,
            &climatology,
            config.test_size,
            config.stride(),
            config.max_lead,
            seed::derive(master, &[stream::TEST_ARCHIVE]),
        )?;
        let kappas: Vec<f64> = kappa.iter().map(|k| k.kappa).collect();
        let dyns: Vec<&dyn Dynamics> = models.iter().map(|m| m.dynamics.as_ref()).collect();
        let test = build_archive(launches, &dyns, &kappas, config.n_members)?;
        let test_pairs = (0..models.len())
            .map(|m| (1..=config.max_lead).map(|l| test.pairset(m, l)).collect())
            .collect::<Result<Vec<Vec<_>>>>()?;
        let climatology_test_ignorance = (1..=config.max_lead)
            .map(|l| {
                let pc = test.launches.climo_at_lead(l);
                pc.iter().map(|&p| ignorance_bits(p)).sum::<f64>() / pc.len() as f64
            })
            .collect();
        Ok(Self {
            config,
            system,
            climatology,
            models,
            kappa,
            test,
            test_pairs,
            climatology_test_ignorance,
        })
    }

    pub fn model_names(&self) -> Vec<String> {
        self.models.iter().map(|m| m.name.clone()).collect()
    }

    pub fn noise_sd(&self) -> f64 {
        self.system.noise_sd
    }

    fn dynamics(&self) -> Vec<&dyn Dynamics> {
        self.models.iter().map(|m| m.dynamics.as_ref()).collect()
    }

    fn kappas(&self) -> Vec<f64> {
        self.kappa.iter().map(|k| k.kappa).collect()
    }

    /// Independent archive `archive_id` of `size` launches.
    pub fn archive(&self, kind: ArchiveKind, archive_id: usize, size: usize) -> Result<Archive> {
        let s = seed::derive(self.config.seed, &[kind.stream(), archive_id as u64]);
        let launches = build_launches(
            &self.system,
            &self.climatology,
            size,
            self.config.stride(),
            self.config.max_lead,
            s,
        )?;
        build_archive(launches, &self.dynamics(), &self.kappas(), self.config.n_members)
    }

    /// Fits `(sigma, alpha)` per model and lead, then weights per lead.
    /// SAP archives choose `(sigma, alpha)` by leave-one-out and, unless
    /// `sap_loo_weights` is off, fit weights on held-out densities: each
    /// pair's density comes from `(sigma, alpha)` fitted without that pair.
    pub fn fit_system(&self, archive: &Archive, kind: ArchiveKind) -> Result<FittedParams> {
        let fitter: fn(&PairSet, &FitConfig) -> Result<SigmaAlphaFit> = match kind {
            ArchiveKind::Lap => fit_sigma_alpha,
            ArchiveKind::Sap => fit_loo,
        };
        let max_lead = self.config.max_lead;
        let mut per_lead = Vec::with_capacity(self.models.len());
        let loo_weights = kind == ArchiveKind::Sap && self.config.sap_loo_weights;
        let mut weight_density = vec![Vec::with_capacity(self.models.len()); max_lead];
        for m in 0..self.models.len() {
            let mut fits = Vec::with_capacity(max_lead);
            for lead in 1..=max_lead {
                let pairs = archive.pairset(m, lead)?;
                let fit = fitter(&pairs, &self.config.fit)?;
                weight_density[lead - 1].push(if loo_weights {
                    held_out_densities(&pairs, &self.config.fit)?
                } else {
                    pairs.blended_at_outcomes(fit.sigma, fit.alpha)
                });
                fits.push(fit);
            }
            per_lead.push(fits);
        }
        let weights = weight_density
            .iter()
            .map(|d| fit_weights_iterative(d, &self.config.fit))
            .collect::<Result<Vec<_>>>()?;
        Ok(FittedParams {
            model_names: self.model_names(),
            kappa: self.kappas(),
            per_lead,
            weights,
        })
    }

    /// Scores a fitted system on the shared test archive.
    pub fn evaluate(&self, archive_id: usize, params: FittedParams) -> ArchiveResult {
        let n_models = self.models.len();
        let max_lead = self.config.max_lead;
        let mut test_ignorance = vec![vec![0.0; max_lead]; n_models];
        let mut test_density = vec![Vec::with_capacity(n_models); max_lead];
        for m in 0..n_models {
            for lead in 1..=max_lead {
                let fit = params.per_lead[m][lead - 1];
                let d = self.test_pairs[m][lead - 1].blended_at_outcomes(fit.sigma, fit.alpha);
                test_ignorance[m][lead - 1] = calibration::mean_ignorance(&d);
                test_density[lead - 1].push(d);
            }
        }
        let mut mm_test_ignorance = Vec::with_capacity(max_lead);
        let mut best_model = Vec::with_capacity(max_lead);
        let mut best_test_ignorance = Vec::with_capacity(max_lead);
        for lead in 1..=max_lead {
            let wf = &params.weights[lead - 1];
            let dens = &test_density[lead - 1];
            let n = dens[0].len();
            let combined: Vec<f64> = (0..n)
                .map(|k| {
                    let vals: Vec<f64> = dens.iter().map(|d| d[k]).collect();
                    wf.weights.combine(&vals)
                })
                .collect();
            mm_test_ignorance.push(calibration::mean_ignorance(&combined));
            let best = wf.ranking[0];
            best_model.push(best);
            best_test_ignorance.push(test_ignorance[best][lead - 1]);
        }
        ArchiveResult {
            archive_id,
            params,
            test_ignorance,
            mm_test_ignorance,
            best_model,
            best_test_ignorance,
        }
    }

    fn run_archives(&self, kind: ArchiveKind, size: usize) -> ExperimentReport {
        let outcomes: Vec<(usize, Result<ArchiveResult>)> = (0..self.config.n_archives)
            .into_par_iter()
            .map(|id| {
                let r = self
                    .archive(kind, id, size)
                    .and_then(|a| self.fit_system(&a, kind))
                    .map(|p| self.evaluate(id, p));
                (id, r)
            })
            .collect();
        let mut results = Vec::new();
        let mut failures = Vec::new();
        for (id, r) in outcomes {
            match r {
                Ok(v) => results.push(v),
                Err(e) => failures.push((id, e.to_string())),
            }
        }
        ExperimentReport {
            kind,
            archive_size: size,
            model_names: self.model_names(),
            max_lead: self.config.max_lead,
            kappa: self.kappas(),
            climatology_test_ignorance: self.climatology_test_ignorance.clone(),
            results,
            failures,
        }
    }

    /// Fits on `n_archives` independent large archives and scores each
    /// fitted system on the shared test archive.
    pub fn run_lap(&self) -> ExperimentReport {
        self.run_archives(ArchiveKind::Lap, self.config.lap_size)
    }

    /// As [`run_lap`](Self::run_lap) with small archives fitted by
    /// leave-one-out.
    pub fn run_sap(&self) -> ExperimentReport {
        self.run_archives(ArchiveKind::Sap, self.config.sap_size)
    }
}

/// The configured noise level, or `noise_fraction` times the attractor's
/// standard deviation when none is set.
pub fn resolve_noise_sd(config: &ExperimentConfig) -> Result<f64> {
    match config.noise_sd {
        Some(sd) => Ok(sd),
        None => Ok(config.noise_fraction
            * chaos::attractor_std_dev(
                config.lambda,
                NOISE_SCALE_STEPS,
                seed::derive(config.seed, &[stream::NOISE_SCALE]),
            )?),
    }
}

/// Observations of a post-spin-up run started from a seed-derived state.
pub fn stationary_observations(system: &SystemParams, length: usize, rng_seed: u64) -> Result<Vec<f64>> {
    let x0 = chaos::random_initial_state(seed::derive(rng_seed, &[stream::INITIAL_STATE]));
    let traj = chaos::generate_trajectory(system, x0, length)?;
    let obs = chaos::observe(&traj, system.noise_sd, seed::derive(rng_seed, &[stream::OBSERVATION]))?;
    Ok(obs.observations)
}

/// Builds a laboratory and runs the large-archive experiment.
pub fn run_lap(config: ExperimentConfig) -> Result<ExperimentReport> {
    Ok(Laboratory::new(config)?.run_lap())
}

/// Runs the small-archive experiment. `lap_report` must come from the same
/// configuration; it is checked for compatibility.
pub fn run_sap(config: ExperimentConfig, lap_report: &ExperimentReport) -> Result<ExperimentReport> {
    let lab = Laboratory::new(config)?;
    if lap_report.model_names != lab.model_names() || lap_report.max_lead != lab.config.max_lead {
        return Err(Error::InvalidParameter(
            "LAP report was produced with a different model set or lead count".into(),
        ));
    }
    Ok(lab.run_sap())
}

/// Per-archive multi-model minus single-best Ignorance for the three
/// pairings LAP-vs-LAP, SAP-vs-SAP and SAP-multi-model-vs-LAP-best.
pub fn run_multimodel_vs_best(lap: &ExperimentReport, sap: &ExperimentReport) -> Result<MultiModelComparison> {
    MultiModelComparison::new(lap, sap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_preset_matches_acceptance_scale() {
        let c = ExperimentConfig::desk();
        assert_eq!((c.n_archives, c.lap_size, c.sap_size), (64, 512, 40));
        assert_eq!(c.stride(), c.max_lead);
        assert!(c.validate().is_ok());
        let f = ExperimentConfig::full();
        assert_eq!((f.n_archives, f.lap_size, f.sap_size, f.test_size, f.n_members), (512, 2048, 40, 2048, 9));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ExperimentConfig::desk();
        c.n_archives = 0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::desk();
        c.ensemble_sizes = vec![8, 4];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::desk();
        c.kappa = Some(vec![0.1, -1.0]);
        assert!(c.validate().is_err());
    }
}
