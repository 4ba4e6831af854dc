//! Kappa-versus-lead and ensemble-size sweeps.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::archive::{build_archive, build_launches};
use super::Laboratory;
use crate::calibration::{fit_sigma_alpha, search_kappa, KappaProblem};
use crate::error::{Error, Result};
use crate::seed::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaSweepRow {
    pub model: usize,
    pub lead: usize,
    pub kappa: f64,
    /// Test Ignorance at `kappa`.
    pub ignorance: f64,
    pub at_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaSweep {
    pub model_names: Vec<String>,
    pub rows: Vec<KappaSweepRow>,
    /// Every evaluated `(model, lead, kappa, ignorance)`, sorted by kappa.
    pub curve: Vec<(usize, usize, f64, f64)>,
    /// Climatology's test Ignorance per lead.
    pub climatology: Vec<f64>,
    /// Observational noise, the natural scale for kappa.
    pub noise_sd: f64,
}

impl KappaSweep {
    pub fn row(&self, model: usize, lead: usize) -> Option<&KappaSweepRow> {
        self.rows.iter().find(|r| r.model == model && r.lead == lead)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSizeRow {
    pub model: usize,
    pub size: usize,
    pub lead: usize,
    pub ignorance: f64,
    pub sigma: f64,
    pub alpha: f64,
}

impl Laboratory {
    /// For each model and lead, the kappa minimising test Ignorance when
    /// `(sigma, alpha)` are refitted on a training archive at every
    /// candidate.
    pub fn run_kappa_sweep(&self) -> Result<KappaSweep> {
        let cfg = &self.config;
        let train = build_launches(
            &self.system,
            &self.climatology,
            cfg.lap_size,
            cfg.stride(),
            cfg.max_lead,
            seed::derive(cfg.seed, &[stream::KAPPA_SWEEP]),
        )?;
        let valid = &self.test.launches;
        let mut rows = Vec::new();
        let mut curve = Vec::new();
        for (m, slot) in self.models.iter().enumerate() {
            for lead in 1..=cfg.max_lead {
                let problem = KappaProblem {
                    model: slot.dynamics.as_ref(),
                    n_members: cfg.n_members,
                    train_launches: train.launches(),
                    valid_launches: valid.launches(),
                    train_outcomes: train.outcomes.clone(),
                    valid_outcomes: valid.outcomes.clone(),
                    leads: vec![lead],
                };
                let seen = Mutex::new(Vec::new());
                let fit = search_kappa(cfg.fit.kappa_grid, &cfg.fit, |k| {
                    let s = problem.score(k, &cfg.fit)?[0];
                    seen.lock().unwrap().push((k, s));
                    Ok(s)
                })?;
                let mut seen = seen.into_inner().unwrap();
                seen.sort_by(|a, b| a.0.total_cmp(&b.0));
                seen.dedup_by(|a, b| a.0 == b.0);
                curve.extend(seen.into_iter().map(|(k, s)| (m, lead, k, s)));
                rows.push(KappaSweepRow {
                    model: m,
                    lead,
                    kappa: fit.kappa,
                    ignorance: fit.validation_ignorance,
                    at_bound: fit.at_bound,
                });
            }
        }
        Ok(KappaSweep {
            model_names: self.model_names(),
            rows,
            curve,
            climatology: self.climatology_test_ignorance.clone(),
            noise_sd: self.noise_sd(),
        })
    }

    /// Test Ignorance and fitted `(sigma, alpha)` for each ensemble size.
    /// Smaller ensembles are the leading members of the largest one, so
    /// sizes are nested.
    pub fn run_ensemble_size_sweep(&self, sizes: &[usize]) -> Result<Vec<EnsembleSizeRow>> {
        let cfg = &self.config;
        let max_size = match sizes.iter().max() {
            Some(&s) if s > 0 => s,
            _ => return Err(Error::InvalidParameter("no ensemble sizes given".into())),
        };
        let train = build_launches(
            &self.system,
            &self.climatology,
            cfg.lap_size,
            cfg.stride(),
            cfg.max_lead,
            seed::derive(cfg.seed, &[stream::ENSEMBLE_SIZE]),
        )?;
        let kappas = self.kappas();
        let mut rows = Vec::new();
        for (m, slot) in self.models.iter().enumerate() {
            let model = [slot.dynamics.as_ref()];
            let tr = build_archive(train.clone(), &model, &kappas[m..=m], max_size)?;
            let te = build_archive(self.test.launches.clone(), &model, &kappas[m..=m], max_size)?;
            for lead in 1..=cfg.max_lead {
                let tr_pairs = tr.pairset(0, lead)?;
                let te_pairs = te.pairset(0, lead)?;
                for &size in sizes {
                    let fit = fit_sigma_alpha(&tr_pairs.truncate_members(size)?, &cfg.fit)?;
                    let ignorance = te_pairs.truncate_members(size)?.score(fit.sigma, fit.alpha);
                    rows.push(EnsembleSizeRow {
                        model: m,
                        size,
                        lead,
                        ignorance,
                        sigma: fit.sigma,
                        alpha: fit.alpha,
                    });
                }
            }
        }
        Ok(rows)
    }
}
