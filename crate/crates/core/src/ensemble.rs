//! Initial-condition ensembles and their propagation under a model.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::chaos::positive_perturbation;
use crate::error::{Error, Result};
use crate::models::Dynamics;
use crate::output::fmt_f64;
use crate::seed;

/// Perturbation scale, either one value for every lead or one per lead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Kappa {
    Single(f64),
    PerLead(Vec<f64>),
}

impl Kappa {
    pub fn at_lead(&self, lead: usize) -> f64 {
        match self {
            Kappa::Single(k) => *k,
            Kappa::PerLead(ks) => ks[lead - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_members: usize,
    pub kappa: Kappa,
    pub max_lead: usize,
}

impl EnsembleConfig {
    pub fn new(n_members: usize, kappa: f64, max_lead: usize) -> Result<Self> {
        let c = Self {
            n_members,
            kappa: Kappa::Single(kappa),
            max_lead,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_members == 0 || self.max_lead == 0 {
            return Err(Error::InvalidParameter(
                "ensemble needs at least one member and one lead time".into(),
            ));
        }
        let ok = |k: f64| k.is_finite() && k > 0.0;
        let valid = match &self.kappa {
            Kappa::Single(k) => ok(*k),
            Kappa::PerLead(ks) => ks.len() == self.max_lead && ks.iter().all(|&k| ok(k)),
        };
        if !valid {
            return Err(Error::InvalidParameter(format!(
                "kappa must be positive (one value or one per lead): {:?}",
                self.kappa
            )));
        }
        Ok(())
    }
}

/// Member states of one model's forecast from one launch, stored lead-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleForecast {
    pub launch_time: usize,
    n_members: usize,
    max_lead: usize,
    values: Vec<f64>,
}

impl EnsembleForecast {
    pub fn n_members(&self) -> usize {
        self.n_members
    }

    pub fn max_lead(&self) -> usize {
        self.max_lead
    }

    /// Member values at lead `lead` (1-based).
    pub fn lead(&self, lead: usize) -> &[f64] {
        assert!(lead >= 1 && lead <= self.max_lead, "lead {lead} out of range");
        &self.values[(lead - 1) * self.n_members..lead * self.n_members]
    }

    pub fn member(&self, member: usize, lead: usize) -> f64 {
        self.lead(lead)[member]
    }
}

/// `n_members` draws of `obs + N(0, kappa^2)`, each redrawn until positive.
pub fn make_ensemble(obs: f64, n_members: usize, kappa: f64, rng_seed: u64) -> Result<Vec<f64>> {
    if !(obs > 0.0 && obs.is_finite()) {
        return Err(Error::Domain(format!("observation must be positive, got {obs}")));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
    }
    let mut rng = seed::rng(rng_seed);
    Ok((0..n_members)
        .map(|_| positive_perturbation(&mut rng, obs, kappa))
        .collect())
}

/// Iterates each initial state under `model` for `max_lead` steps.
pub fn propagate(model: &dyn Dynamics, initials: &[f64], max_lead: usize) -> Result<EnsembleForecast> {
    if initials.is_empty() || max_lead == 0 {
        return Err(Error::InvalidParameter(
            "propagation needs at least one member and one lead time".into(),
        ));
    }
    let n = initials.len();
    let mut values = vec![0.0; n * max_lead];
    for (member, &x0) in initials.iter().enumerate() {
        let mut x = x0;
        for lead in 1..=max_lead {
            x = model.step(x).map_err(|e| Error::Propagation {
                member,
                lead,
                source: Box::new(e),
            })?;
            if !x.is_finite() {
                return Err(Error::Propagation {
                    member,
                    lead,
                    source: Box::new(Error::Divergence { step: lead, value: x }),
                });
            }
            values[(lead - 1) * n + member] = x;
        }
    }
    Ok(EnsembleForecast {
        launch_time: 0,
        n_members: n,
        max_lead,
        values,
    })
}

/// Builds and propagates the ensemble launched from observation `obs`.
///
/// With a per-lead kappa every lead gets its own initial ensemble, drawn from
/// the same random stream so that leads share their standard-normal draws.
pub fn forecast(
    model: &dyn Dynamics,
    obs: f64,
    launch_time: usize,
    config: &EnsembleConfig,
    rng_seed: u64,
) -> Result<EnsembleForecast> {
    config.validate()?;
    let mut fc = match &config.kappa {
        Kappa::Single(k) => {
            let initials = make_ensemble(obs, config.n_members, *k, rng_seed)?;
            propagate(model, &initials, config.max_lead)?
        }
        Kappa::PerLead(ks) => {
            let n = config.n_members;
            let mut values = vec![0.0; n * config.max_lead];
            for (i, &k) in ks.iter().enumerate() {
                let lead = i + 1;
                let initials = make_ensemble(obs, n, k, rng_seed)?;
                let f = propagate(model, &initials, lead)?;
                values[i * n..lead * n].copy_from_slice(f.lead(lead));
            }
            EnsembleForecast {
                launch_time,
                n_members: n,
                max_lead: config.max_lead,
                values,
            }
        }
    };
    fc.launch_time = launch_time;
    Ok(fc)
}

/// Writes `(launch, model, member, lead, value)` rows.
pub fn write_ensembles_csv<W: Write>(
    writer: W,
    rows: &[(String, &EnsembleForecast)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["launch", "model", "member", "lead", "value"])?;
    for (model, fc) in rows {
        for lead in 1..=fc.max_lead {
            for (member, &v) in fc.lead(lead).iter().enumerate() {
                w.write_record([
                    fc.launch_time.to_string(),
                    model.clone(),
                    member.to_string(),
                    lead.to_string(),
                    fmt_f64(v),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaos::RickerSystem;
    use crate::models::{ModelBank, ModelId};

    #[test]
    fn member_count_and_positivity() {
        let e = make_ensemble(0.05, 9, 0.2, 1).unwrap();
        assert_eq!(e.len(), 9);
        assert!(e.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn tiny_kappa_collapses_onto_observation() {
        let e = make_ensemble(0.7, 50, 1e-12, 2).unwrap();
        assert!(e.iter().all(|&x| (x - 0.7).abs() < 1e-10));
    }

    #[test]
    fn ensemble_spread_matches_kappa() {
        let kappa = 0.1;
        let e = make_ensemble(5.0, 100_000, kappa, 3).unwrap();
        let sd = crate::stats::std_dev(&e);
        assert!((sd / kappa - 1.0).abs() < 0.02, "sd {sd}");
    }

    #[test]
    fn invalid_inputs() {
        assert!(make_ensemble(0.0, 9, 0.1, 1).is_err());
        assert!(make_ensemble(1.0, 9, 0.0, 1).is_err());
        assert!(EnsembleConfig::new(0, 0.1, 3).is_err());
        let sys = RickerSystem { lambda: 3.0 };
        assert!(propagate(&sys, &[], 3).is_err());
    }

    #[test]
    fn propagation_is_composition() {
        let bank = ModelBank::paper_default().unwrap();
        let m = bank.get(ModelId::IV);
        let f = propagate(m, &[1.0], 2).unwrap();
        let twice = m.step(m.step(1.0).unwrap()).unwrap();
        assert_eq!(f.member(0, 2), twice);
        let one = propagate(m, &[0.4, 1.3], 1).unwrap();
        assert_eq!(one.lead(1), &[m.step(0.4).unwrap(), m.step(1.3).unwrap()]);
    }

    #[test]
    fn perfect_model_from_truth_follows_truth() {
        let sys = RickerSystem { lambda: 3.0 };
        let params = crate::chaos::SystemParams::new(3.0, 0.0, 100).unwrap();
        let traj = crate::chaos::generate_trajectory(&params, 0.3, 8).unwrap();
        let f = propagate(&sys, &[traj.states[0]; 4], 7).unwrap();
        for lead in 1..=7 {
            assert!(f.lead(lead).iter().all(|&x| x == traj.states[lead]));
        }
    }

    #[test]
    fn divergence_is_located() {
        struct Blowup;
        impl Dynamics for Blowup {
            fn step(&self, x: f64) -> Result<f64> {
                Ok(if x > 10.0 { f64::INFINITY } else { x * 100.0 })
            }
            fn name(&self) -> String {
                "blowup".into()
            }
        }
        match propagate(&Blowup, &[0.5, 1.0], 3) {
            Err(Error::Propagation { member, lead, .. }) => {
                assert_eq!((member, lead), (0, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn per_lead_kappa_uses_separate_initials() {
        let sys = RickerSystem { lambda: 3.0 };
        let single = EnsembleConfig::new(5, 0.1, 2).unwrap();
        let per = EnsembleConfig {
            n_members: 5,
            kappa: Kappa::PerLead(vec![0.1, 0.1]),
            max_lead: 2,
        };
        let a = forecast(&sys, 0.8, 3, &single, 7).unwrap();
        let b = forecast(&sys, 0.8, 3, &per, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.launch_time, 3);
    }
}
