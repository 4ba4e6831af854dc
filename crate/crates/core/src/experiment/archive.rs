//! Forecast-outcome archives: launches drawn from one observed trajectory
//! plus each model's ensemble forecast from every launch.

use crate::calibration::PairSet;
use crate::chaos::{self, SystemParams};
use crate::density::{Climatology, Density};
use crate::ensemble::{self, EnsembleForecast};
use crate::error::{Error, Result};
use crate::models::Dynamics;
use crate::seed::{self, stream};

/// Launch observations with their verifying outcomes.
#[derive(Debug, Clone)]
pub struct LaunchSet {
    pub launch_times: Vec<usize>,
    pub launch_obs: Vec<f64>,
    /// Ensemble seed per launch, shared by every model.
    pub seeds: Vec<u64>,
    /// `outcomes[launch][lead - 1] = (observation, climatological density)`
    pub outcomes: Vec<Vec<(f64, f64)>>,
    pub max_lead: usize,
}

impl LaunchSet {
    pub fn len(&self) -> usize {
        self.launch_obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.launch_obs.is_empty()
    }

    /// `(observation at launch, seed)` per launch.
    pub fn launches(&self) -> Vec<(f64, u64)> {
        self.launch_obs.iter().copied().zip(self.seeds.iter().copied()).collect()
    }

    pub fn outcomes_at_lead(&self, lead: usize) -> Vec<f64> {
        self.outcomes.iter().map(|o| o[lead - 1].0).collect()
    }

    pub fn climo_at_lead(&self, lead: usize) -> Vec<f64> {
        self.outcomes.iter().map(|o| o[lead - 1].1).collect()
    }
}

/// `n_launches` launches `stride` steps apart on a fresh observed run. The
/// outcome at lead `tau` of the launch at `t` is the observation at `t + tau`.
pub fn build_launches(
    system: &SystemParams,
    climo: &Climatology,
    n_launches: usize,
    stride: usize,
    max_lead: usize,
    rng_seed: u64,
) -> Result<LaunchSet> {
    if n_launches == 0 || stride == 0 || max_lead == 0 {
        return Err(Error::InvalidParameter(
            "launch set needs positive size, stride and lead".into(),
        ));
    }
    let length = (n_launches - 1) * stride + max_lead + 1;
    let x0 = chaos::random_initial_state(seed::derive(rng_seed, &[stream::INITIAL_STATE]));
    let traj = chaos::generate_trajectory(system, x0, length)?;
    let obs = chaos::observe(&traj, system.noise_sd, seed::derive(rng_seed, &[stream::OBSERVATION]))?
        .observations;
    let launch_times: Vec<usize> = (0..n_launches).map(|i| i * stride).collect();
    let outcomes = launch_times
        .iter()
        .map(|&t| {
            (1..=max_lead)
                .map(|l| (obs[t + l], climo.pdf(obs[t + l])))
                .collect()
        })
        .collect();
    Ok(LaunchSet {
        launch_obs: launch_times.iter().map(|&t| obs[t]).collect(),
        seeds: (0..n_launches)
            .map(|i| seed::derive(rng_seed, &[stream::ENSEMBLE, i as u64]))
            .collect(),
        launch_times,
        outcomes,
        max_lead,
    })
}

/// Every model's ensemble forecast from every launch of a [`LaunchSet`].
#[derive(Debug, Clone)]
pub struct Archive {
    pub launches: LaunchSet,
    pub n_members: usize,
    /// `forecasts[model][launch]`
    pub forecasts: Vec<Vec<EnsembleForecast>>,
}

/// Forecasts each launch with every model. Model `m` perturbs with
/// `kappas[m]`; all models draw from the launch's shared seed.
pub fn build_archive(
    launches: LaunchSet,
    models: &[&dyn Dynamics],
    kappas: &[f64],
    n_members: usize,
) -> Result<Archive> {
    if models.len() != kappas.len() {
        return Err(Error::InvalidParameter(format!(
            "{} models but {} kappa values",
            models.len(),
            kappas.len()
        )));
    }
    let forecasts = models
        .iter()
        .zip(kappas)
        .map(|(model, &kappa)| {
            launches
                .launches()
                .into_iter()
                .enumerate()
                .map(|(i, (obs, s))| {
                    let initials = ensemble::make_ensemble(obs, n_members, kappa, s)?;
                    let mut fc = ensemble::propagate(*model, &initials, launches.max_lead)?;
                    fc.launch_time = launches.launch_times[i];
                    Ok(fc)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Archive {
        launches,
        n_members,
        forecasts,
    })
}

impl Archive {
    pub fn len(&self) -> usize {
        self.launches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.launches.is_empty()
    }

    pub fn n_models(&self) -> usize {
        self.forecasts.len()
    }

    /// Pairs of model `model` at lead `lead` (1-based).
    pub fn pairset(&self, model: usize, lead: usize) -> Result<PairSet> {
        if model >= self.n_models() || lead == 0 || lead > self.launches.max_lead {
            return Err(Error::InvalidParameter(format!(
                "no pairs for model {model} at lead {lead}"
            )));
        }
        let members = self.forecasts[model]
            .iter()
            .flat_map(|f| f.lead(lead).iter().copied())
            .collect();
        PairSet::new(
            self.n_members,
            members,
            self.launches.outcomes_at_lead(lead),
            self.launches.climo_at_lead(lead),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaos::RickerSystem;

    fn climo(system: &SystemParams) -> Climatology {
        let obs = crate::experiment::stationary_observations(system, 2048, 7).unwrap();
        Climatology::from_sample(obs).unwrap()
    }

    #[test]
    fn outcomes_follow_launches_by_lead() {
        let system = SystemParams::new(3.0, 0.0, 100).unwrap();
        let c = climo(&system);
        let ls = build_launches(&system, &c, 5, 4, 4, 11).unwrap();
        assert_eq!(ls.launch_times, vec![0, 4, 8, 12, 16]);
        // noise-free: the lead-1 outcome is one system step from the launch
        for (i, &x) in ls.launch_obs.iter().enumerate() {
            let next = chaos::step(x, 3.0).unwrap();
            assert!((ls.outcomes[i][0].0 - next).abs() < 1e-12);
        }
        // consecutive launches tile the run: lead 4 of one is the next launch
        for i in 0..4 {
            assert_eq!(ls.outcomes[i][3].0, ls.launch_obs[i + 1]);
        }
    }

    #[test]
    fn identical_models_share_ensembles() {
        let system = SystemParams::new(3.0, 0.01, 100).unwrap();
        let c = climo(&system);
        let ls = build_launches(&system, &c, 6, 3, 3, 5).unwrap();
        let a = RickerSystem { lambda: 3.0 };
        let b = RickerSystem { lambda: 3.0 };
        let arch = build_archive(ls, &[&a, &b], &[0.01, 0.01], 4).unwrap();
        for lead in 1..=3 {
            assert_eq!(arch.pairset(0, lead).unwrap(), arch.pairset(1, lead).unwrap());
        }
        assert!(arch.pairset(2, 1).is_err());
        assert!(arch.pairset(0, 4).is_err());
    }
}
