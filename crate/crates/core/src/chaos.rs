//! The Moran-Ricker map, its observation process and Lyapunov exponent.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Dynamics;
use crate::seed;

pub const DEFAULT_LAMBDA: f64 = 3.0;
pub const DEFAULT_SPINUP: usize = 1000;

/// Parameters of the truth system and its observation process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub lambda: f64,
    pub noise_sd: f64,
    pub spinup_steps: usize,
}

impl SystemParams {
    pub fn new(lambda: f64, noise_sd: f64, spinup_steps: usize) -> Result<Self> {
        let params = Self {
            lambda,
            noise_sd,
            spinup_steps,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise_sd must be non-negative, got {}",
                self.noise_sd
            )));
        }
        Ok(())
    }
}

/// One application of the map `x -> x exp(lambda (1 - x))`.
pub fn step(x: f64, lambda: f64) -> Result<f64> {
    if !x.is_finite() || !lambda.is_finite() {
        return Err(Error::Domain(format!(
            "step requires finite input, got x={x}, lambda={lambda}"
        )));
    }
    Ok(step_unchecked(x, lambda))
}

#[inline]
pub(crate) fn step_unchecked(x: f64, lambda: f64) -> f64 {
    x * (lambda * (1.0 - x)).exp()
}

/// The truth system viewed as a (perfect) forecast model.
#[derive(Debug, Clone, Copy)]
pub struct RickerSystem {
    pub lambda: f64,
}

impl Dynamics for RickerSystem {
    fn step(&self, x: f64) -> Result<f64> {
        step(x, self.lambda)
    }

    fn name(&self) -> String {
        "system".to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start_index: i64,
    pub states: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    pub start_index: i64,
    pub observations: Vec<f64>,
}

impl ObservationSeries {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Iterates the map `spinup_steps` times from `x0`, discarding the output,
/// then records `length` states. The first recorded state is the one reached
/// after the spin-up.
pub fn generate_trajectory(params: &SystemParams, x0: f64, length: usize) -> Result<Trajectory> {
    params.validate()?;
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "initial state must be positive, got {x0}"
        )));
    }
    if length == 0 {
        return Err(Error::InvalidParameter(
            "trajectory length must be positive".into(),
        ));
    }
    let mut x = x0;
    let mut states = Vec::with_capacity(length);
    for i in 0..params.spinup_steps + length {
        if i >= params.spinup_steps {
            states.push(x);
        }
        x = step_unchecked(x, params.lambda);
        if !x.is_finite() {
            return Err(Error::Divergence { step: i + 1, value: x });
        }
    }
    Ok(Trajectory {
        start_index: 0,
        states,
    })
}

/// Initial state drawn uniformly from (0.1, 2.0) using `rng_seed`.
pub fn random_initial_state(rng_seed: u64) -> f64 {
    let mut rng = seed::rng(rng_seed);
    rng.random_range(0.1..2.0)
}

/// Draws `value + sd * z` with standard normal `z`, redrawing until the
/// result is strictly positive.
pub(crate) fn positive_perturbation(rng: &mut seed::Rng, value: f64, sd: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let s = value + sd * z;
        if s > 0.0 {
            return s;
        }
    }
}

/// Adds Gaussian observational noise to every state. Draws that would make
/// an observation non-positive are rejected and redrawn.
pub fn observe(traj: &Trajectory, noise_sd: f64, rng_seed: u64) -> Result<ObservationSeries> {
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise_sd must be non-negative, got {noise_sd}"
        )));
    }
    if let Some(bad) = traj.states.iter().find(|&&x| !(x > 0.0)) {
        return Err(Error::Domain(format!(
            "cannot observe non-positive state {bad}"
        )));
    }
    let mut rng = seed::rng(rng_seed);
    let observations = traj
        .states
        .iter()
        .map(|&x| {
            if noise_sd == 0.0 {
                x
            } else {
                positive_perturbation(&mut rng, x, noise_sd)
            }
        })
        .collect();
    Ok(ObservationSeries {
        start_index: traj.start_index,
        observations,
    })
}

/// Standard deviation of the invariant measure, estimated from `length`
/// post-spin-up states.
pub fn attractor_std_dev(lambda: f64, length: usize, rng_seed: u64) -> Result<f64> {
    let params = SystemParams::new(lambda, 0.0, DEFAULT_SPINUP)?;
    let traj = generate_trajectory(&params, random_initial_state(rng_seed), length)?;
    Ok(crate::stats::std_dev(&traj.states))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    /// Time-averaged log stretching rate, nats per step.
    pub exponent: f64,
    pub n_steps: usize,
    /// Steps skipped because the derivative vanished exactly.
    pub degenerate_steps: usize,
}

pub const MIN_LYAPUNOV_STEPS: usize = 10_000;

/// Global Lyapunov exponent from the analytic derivative
/// `exp(lambda (1 - x)) (1 - lambda x)` averaged along a post-spin-up orbit.
pub fn lyapunov_exponent(lambda: f64, n_steps: usize, rng_seed: u64) -> Result<LyapunovEstimate> {
    if n_steps < MIN_LYAPUNOV_STEPS {
        return Err(Error::InvalidParameter(format!(
            "lyapunov estimation needs at least {MIN_LYAPUNOV_STEPS} steps, got {n_steps}"
        )));
    }
    let params = SystemParams::new(lambda, 0.0, DEFAULT_SPINUP)?;
    let mut x = random_initial_state(rng_seed);
    for i in 0..params.spinup_steps {
        x = step_unchecked(x, lambda);
        if !x.is_finite() {
            return Err(Error::Divergence { step: i + 1, value: x });
        }
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut degenerate = 0usize;
    for i in 0..n_steps {
        let slope = 1.0 - lambda * x;
        if slope == 0.0 {
            degenerate += 1;
        } else {
            // ln|f'(x)| = lambda (1 - x) + ln|1 - lambda x|
            sum += lambda * (1.0 - x) + slope.abs().ln();
            used += 1;
        }
        x = step_unchecked(x, lambda);
        if !x.is_finite() {
            return Err(Error::Divergence {
                step: params.spinup_steps + i + 1,
                value: x,
            });
        }
    }
    Ok(LyapunovEstimate {
        exponent: sum / used as f64,
        n_steps,
        degenerate_steps: degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_point_and_zero() {
        for lambda in [0.1, 1.0, 3.0, 17.5] {
            assert_eq!(step(1.0, lambda).unwrap(), 1.0);
            assert_eq!(step(0.0, lambda).unwrap(), 0.0);
        }
    }

    #[test]
    fn step_half() {
        // 0.5 e^{1.5} evaluated independently to 20 digits: 2.2408445351690322...
        let v = step(0.5, 3.0).unwrap();
        assert!((v - 2.240_844_535_169_032_2).abs() < 1e-14);
        assert!((v - 2.24084).abs() < 5e-6);
    }

    #[test]
    fn step_rejects_non_finite() {
        assert!(step(f64::NAN, 3.0).is_err());
        assert!(step(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn trajectory_from_fixed_point() {
        let p = SystemParams::new(3.0, 0.0, 10).unwrap();
        let t = generate_trajectory(&p, 1.0, 5).unwrap();
        assert_eq!(t.states, vec![1.0; 5]);
    }

    #[test]
    fn trajectory_stays_positive() {
        let p = SystemParams::new(3.0, 0.0, 1000).unwrap();
        let t = generate_trajectory(&p, 0.3, 2048).unwrap();
        assert_eq!(t.len(), 2048);
        assert!(t.states.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn empty_trajectory_is_rejected() {
        let p = SystemParams::new(3.0, 0.0, 0).unwrap();
        assert!(generate_trajectory(&p, 0.3, 0).is_err());
        assert!(generate_trajectory(&p, 0.0, 3).is_err());
    }

    #[test]
    fn divergence_reports_step() {
        let p = SystemParams::new(800.0, 0.0, 0).unwrap();
        match generate_trajectory(&p, 1e-3, 4) {
            Err(Error::Divergence { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn noiseless_observation_is_exact() {
        let p = SystemParams::new(3.0, 0.0, 100).unwrap();
        let t = generate_trajectory(&p, 0.4, 64).unwrap();
        let o = observe(&t, 0.0, 9).unwrap();
        assert_eq!(o.observations, t.states);
    }

    #[test]
    fn observations_are_positive_for_small_states() {
        let t = Trajectory {
            start_index: 0,
            states: vec![1e-3; 5000],
        };
        let o = observe(&t, 0.5, 3).unwrap();
        assert!(o.observations.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn observation_noise_is_unbiased() {
        let n = 100_000;
        let t = Trajectory {
            start_index: 0,
            states: vec![5.0; n],
        };
        let sd = 0.1;
        let o = observe(&t, sd, 11).unwrap();
        let bias = o.observations.iter().map(|s| s - 5.0).sum::<f64>() / n as f64;
        assert!(bias.abs() < 3.0 * sd / (n as f64).sqrt(), "bias {bias}");
    }

    #[test]
    fn lyapunov_at_stable_fixed_point() {
        let est = lyapunov_exponent(0.5, 20_000, 1).unwrap();
        assert!((est.exponent - 0.5f64.ln()).abs() < 1e-3, "{est:?}");
    }

    #[test]
    fn lyapunov_needs_enough_steps() {
        assert!(lyapunov_exponent(3.0, 100, 1).is_err());
    }
}
