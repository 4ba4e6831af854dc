//! The four imperfect models of the Moran-Ricker map.
//!
//! * Model I: the exponential replaced by its 12th-order Taylor polynomial in
//!   `(1 - x)`, coefficients rounded to 3 decimals.
//! * Model II: the log-space map `u -> u + 3 - 3 e^u` (`u = ln x`) expanded
//!   to 8th order in `u`, coefficients rounded to 4 decimals.
//! * Model III: a 10th-order Fourier series of the map fitted on `[0, pi]`.
//! * Model IV: the exact map with the growth term shifted by `delta`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::chaos::{self, RickerSystem};
use crate::error::{Error, Result};
use crate::quadrature;
use crate::seed;

/// A deterministic one-dimensional forecast model.
pub trait Dynamics: Send + Sync {
    fn step(&self, x: f64) -> Result<f64>;

    fn name(&self) -> String;

    /// Applies `step` `n` times.
    fn iterate(&self, x: f64, n: usize) -> Result<f64> {
        (0..n).try_fold(x, |acc, _| self.step(acc))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelId {
    I,
    II,
    III,
    IV,
}

impl ModelId {
    pub const ALL: [ModelId; 4] = [ModelId::I, ModelId::II, ModelId::III, ModelId::IV];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelId::I => "I",
            ModelId::II => "II",
            ModelId::III => "III",
            ModelId::IV => "IV",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "1" => Ok(ModelId::I),
            "II" | "2" => Ok(ModelId::II),
            "III" | "3" => Ok(ModelId::III),
            "IV" | "4" => Ok(ModelId::IV),
            other => Err(Error::Parse(format!("unknown model id {other:?}"))),
        }
    }
}

/// How series coefficients are cut to a fixed number of decimals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Rounding {
    #[default]
    HalfAwayFromZero,
    Truncate,
}

impl FromStr for Rounding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "round" | "half_away_from_zero" => Ok(Rounding::HalfAwayFromZero),
            "truncate" => Ok(Rounding::Truncate),
            other => Err(Error::Parse(format!("unknown rounding mode {other:?}"))),
        }
    }
}

fn factorial(k: u32) -> u128 {
    (1..=k as u128).product()
}

/// `numerator / denominator` cut to `decimals` places using exact integer
/// arithmetic. Both arguments are non-negative.
fn cut_ratio(numerator: u128, denominator: u128, decimals: u32, rounding: Rounding) -> f64 {
    let scaled = numerator * 10u128.pow(decimals);
    let q = scaled / denominator;
    let r = scaled % denominator;
    let units = match rounding {
        Rounding::Truncate => q,
        Rounding::HalfAwayFromZero => {
            if 2 * r >= denominator {
                q + 1
            } else {
                q
            }
        }
    };
    units as f64 / 10f64.powi(decimals as i32)
}

/// Polynomial series model. For Model I the coefficients multiply powers
/// `(1 - x)^k`, `k = 0..=12`; for Model II they multiply `(ln x)^k`,
/// `k = 1..=8`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialModel {
    pub coefficients: Vec<f64>,
    pub truncation_decimals: u32,
    /// Power of the first coefficient.
    pub first_power: u32,
}

impl PolynomialModel {
    /// Coefficient of the term of power `k`.
    pub fn coefficient(&self, k: u32) -> Option<f64> {
        k.checked_sub(self.first_power)
            .and_then(|i| self.coefficients.get(i as usize))
            .copied()
    }

    fn eval_series(&self, u: f64) -> f64 {
        // Horner over the stored powers, then shift by first_power.
        let h = self
            .coefficients
            .iter()
            .rev()
            .fold(0.0, |acc, &c| acc * u + c);
        h * u.powi(self.first_power as i32)
    }
}

pub const MODEL_ONE_ORDER: u32 = 12;
pub const MODEL_ONE_DECIMALS: u32 = 3;
pub const MODEL_TWO_ORDER: u32 = 8;
pub const MODEL_TWO_DECIMALS: u32 = 4;

/// Model I coefficients `3^k / k!`, `k = 0..=12`, cut to 3 decimals.
pub fn build_model_one(rounding: Rounding) -> PolynomialModel {
    let coefficients = (0..=MODEL_ONE_ORDER)
        .map(|k| cut_ratio(3u128.pow(k), factorial(k), MODEL_ONE_DECIMALS, rounding))
        .collect();
    PolynomialModel {
        coefficients,
        truncation_decimals: MODEL_ONE_DECIMALS,
        first_power: 0,
    }
}

/// Model II coefficients: `-2` for `k = 1`, `-3 / k!` for `k = 2..=8`,
/// cut to 4 decimals.
pub fn build_model_two(rounding: Rounding) -> PolynomialModel {
    let coefficients = (1..=MODEL_TWO_ORDER)
        .map(|k| {
            if k == 1 {
                -2.0
            } else {
                -cut_ratio(3, factorial(k), MODEL_TWO_DECIMALS, rounding)
            }
        })
        .collect();
    PolynomialModel {
        coefficients,
        truncation_decimals: MODEL_TWO_DECIMALS,
        first_power: 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierModel {
    /// `a_0 ..= a_10`
    pub a_coeffs: Vec<f64>,
    /// `b_1 ..= b_10`
    pub b_coeffs: Vec<f64>,
}

pub const FOURIER_ORDER: usize = 10;
pub const FOURIER_TOLERANCE: f64 = 1e-12;

impl FourierModel {
    /// `a_0 / 2 + sum_i [a_i cos(2 i x) + b_i sin(2 i x)]`, with the
    /// harmonics generated by angle addition from one `sin_cos`.
    pub fn eval(&self, x: f64) -> f64 {
        let (s1, c1) = (2.0 * x).sin_cos();
        let (mut s, mut c) = (s1, c1);
        let mut acc = 0.5 * self.a_coeffs[0];
        for i in 1..self.a_coeffs.len() {
            acc += self.a_coeffs[i] * c + self.b_coeffs[i - 1] * s;
            (s, c) = (s * c1 + c * s1, c * c1 - s * s1);
        }
        acc
    }
}

/// Fourier coefficients of `x exp(lambda (1 - x))` on `[0, pi]` by adaptive
/// quadrature.
pub fn build_model_three(lambda: f64) -> Result<FourierModel> {
    if !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda must be finite, got {lambda}")));
    }
    let coeff = |i: usize, trig: fn(f64) -> f64| -> Result<f64> {
        let w = 2.0 * i as f64;
        let r = quadrature::integrate(
            |x| x * (lambda * (1.0 - x)).exp() * trig(w * x),
            0.0,
            PI,
            FOURIER_TOLERANCE,
            4096,
        )?;
        Ok(2.0 / PI * r.value)
    };
    let a_coeffs = (0..=FOURIER_ORDER)
        .map(|i| coeff(i, f64::cos))
        .collect::<Result<Vec<_>>>()?;
    let b_coeffs = (1..=FOURIER_ORDER)
        .map(|i| coeff(i, f64::sin))
        .collect::<Result<Vec<_>>>()?;
    Ok(FourierModel { a_coeffs, b_coeffs })
}

pub const DEFAULT_DELTA: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftedModel {
    pub delta: f64,
    pub lambda: f64,
}

/// One of the four imperfect models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Taylor(PolynomialModel),
    LogTaylor(PolynomialModel),
    Fourier(FourierModel),
    Shifted(ShiftedModel),
}

impl Model {
    pub fn id(&self) -> ModelId {
        match self {
            Model::Taylor(_) => ModelId::I,
            Model::LogTaylor(_) => ModelId::II,
            Model::Fourier(_) => ModelId::III,
            Model::Shifted(_) => ModelId::IV,
        }
    }
}

impl Dynamics for Model {
    fn step(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::Domain(format!(
                "model {} requires a finite state, got {x}",
                self.id()
            )));
        }
        let y = match self {
            Model::Taylor(p) => x * p.eval_series(1.0 - x),
            Model::LogTaylor(p) => {
                if x < 0.0 {
                    return Err(Error::Domain(format!(
                        "model II is defined for positive states only, got {x}"
                    )));
                }
                // The map tends to 0 as x -> 0+; exp underflow lands exactly there.
                if x == 0.0 {
                    0.0
                } else {
                    p.eval_series(x.ln()).exp()
                }
            }
            Model::Fourier(f) => f.eval(x),
            Model::Shifted(s) => x * (s.lambda * (1.0 - s.delta - x)).exp(),
        };
        Ok(y)
    }

    fn name(&self) -> String {
        self.id().to_string()
    }
}

/// The fixed set of imperfect models used throughout the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBank {
    models: Vec<Model>,
}

impl ModelBank {
    pub fn new(lambda: f64, delta: f64, rounding: Rounding) -> Result<Self> {
        Ok(Self {
            models: vec![
                Model::Taylor(build_model_one(rounding)),
                Model::LogTaylor(build_model_two(rounding)),
                Model::Fourier(build_model_three(lambda)?),
                Model::Shifted(ShiftedModel { delta, lambda }),
            ],
        })
    }

    pub fn paper_default() -> Result<Self> {
        Self::new(chaos::DEFAULT_LAMBDA, DEFAULT_DELTA, Rounding::default())
    }

    pub fn get(&self, id: ModelId) -> &Model {
        &self.models[id.index()]
    }

    pub fn models(&self) -> &[Model] {
        &self.models
    }

    /// One step of model `id`.
    pub fn model_step(&self, id: ModelId, x: f64) -> Result<f64> {
        self.get(id).step(x)
    }

    /// Rows of `(model, term, coefficient)` describing every model.
    pub fn coefficient_table(&self) -> Vec<(ModelId, String, f64)> {
        let mut rows = Vec::new();
        for m in &self.models {
            let id = m.id();
            match m {
                Model::Taylor(p) | Model::LogTaylor(p) => {
                    for (i, &c) in p.coefficients.iter().enumerate() {
                        rows.push((id, format!("k{}", i as u32 + p.first_power), c));
                    }
                }
                Model::Fourier(f) => {
                    for (i, &c) in f.a_coeffs.iter().enumerate() {
                        rows.push((id, format!("a{i}"), c));
                    }
                    for (i, &c) in f.b_coeffs.iter().enumerate() {
                        rows.push((id, format!("b{}", i + 1), c));
                    }
                }
                Model::Shifted(s) => {
                    rows.push((id, "delta".into(), s.delta));
                    rows.push((id, "lambda".into(), s.lambda));
                }
            }
        }
        rows
    }
}

/// Initial condition paired with model-minus-system difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelError {
    pub initial_condition: f64,
    pub model_value: f64,
    pub system_value: f64,
    pub error: f64,
}

/// Samples `n_points` initial conditions from the natural measure of the
/// system and compares `steps` iterations of `model` against the system.
pub fn model_error_histogram(
    model: &dyn Dynamics,
    lambda: f64,
    n_points: usize,
    steps: usize,
    rng_seed: u64,
) -> Result<Vec<ModelError>> {
    if n_points == 0 {
        return Err(Error::InvalidParameter("n_points must be at least 1".into()));
    }
    let params = chaos::SystemParams::new(lambda, 0.0, chaos::DEFAULT_SPINUP)?;
    let traj = chaos::generate_trajectory(&params, chaos::random_initial_state(rng_seed), n_points)?;
    let system = RickerSystem { lambda };
    traj.states
        .iter()
        .map(|&x| {
            let model_value = model.iterate(x, steps)?;
            let system_value = system.iterate(x, steps)?;
            Ok(ModelError {
                initial_condition: x,
                model_value,
                system_value,
                error: model_value - system_value,
            })
        })
        .collect()
}

/// Seed used for model-error sampling under a master seed.
pub fn model_error_seed(master: u64) -> u64 {
    seed::derive(master, &[seed::stream::MODEL_ERROR])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_coefficients_model_one() {
        let m = build_model_one(Rounding::default());
        assert_eq!(m.coefficients.len(), 13);
        assert_eq!(m.coefficient(0), Some(1.0));
        assert_eq!(m.coefficient(1), Some(3.0));
        assert_eq!(m.coefficient(2), Some(4.5));
        assert_eq!(m.coefficient(11), Some(0.004));
        assert_eq!(m.coefficient(12), Some(0.001));
    }

    #[test]
    fn printed_coefficients_model_two() {
        let m = build_model_two(Rounding::default());
        assert_eq!(m.coefficients.len(), 8);
        assert_eq!(m.coefficient(0), None);
        assert_eq!(m.coefficient(1), Some(-2.0));
        assert_eq!(m.coefficient(2), Some(-1.5));
        assert_eq!(m.coefficient(3), Some(-0.5));
        assert_eq!(m.coefficient(7), Some(-0.0006));
        assert_eq!(m.coefficient(8), Some(-0.0001));
    }

    #[test]
    fn truncation_differs_where_expected() {
        // 3^6/6! = 1.0125 exactly: the half case.
        assert_eq!(build_model_one(Rounding::HalfAwayFromZero).coefficient(6), Some(1.013));
        assert_eq!(build_model_one(Rounding::Truncate).coefficient(6), Some(1.012));
        let t = build_model_two(Rounding::Truncate);
        assert_eq!(t.coefficient(7), Some(-0.0005));
        assert_eq!(t.coefficient(8), Some(0.0));
    }

    #[test]
    fn fixed_point_identities() {
        let bank = ModelBank::paper_default().unwrap();
        assert_eq!(bank.model_step(ModelId::I, 1.0).unwrap(), 1.0);
        assert_eq!(bank.model_step(ModelId::II, 1.0).unwrap(), 1.0);
        let iv = bank.model_step(ModelId::IV, 1.0).unwrap();
        // e^{-0.06} = 0.94176453358424872...
        assert!((iv - 0.941_764_533_584_248_7).abs() < 1e-12);
    }

    #[test]
    fn model_two_domain() {
        let bank = ModelBank::paper_default().unwrap();
        assert!(matches!(bank.model_step(ModelId::II, -0.1), Err(Error::Domain(_))));
        assert!(bank.model_step(ModelId::II, f64::NAN).is_err());
        assert_eq!(bank.model_step(ModelId::II, 0.0).unwrap(), 0.0);
        // deep in the left tail the image underflows to zero and stays there
        let x = bank.get(ModelId::II).iterate(1e-300, 3).unwrap();
        assert_eq!(x, 0.0);
    }

    #[test]
    fn model_four_without_shift_is_the_system() {
        let m = Model::Shifted(ShiftedModel { delta: 0.0, lambda: 3.0 });
        for x in [0.01, 0.3, 1.0, 1.7, 2.4] {
            assert_eq!(m.step(x).unwrap(), chaos::step(x, 3.0).unwrap());
        }
    }

    #[test]
    fn fourier_at_zero() {
        let f = build_model_three(3.0).unwrap();
        assert_eq!(f.a_coeffs.len(), 11);
        assert_eq!(f.b_coeffs.len(), 10);
        let direct = 0.5 * f.a_coeffs[0] + f.a_coeffs[1..].iter().sum::<f64>();
        assert!((f.eval(0.0) - direct).abs() < 1e-14);
    }

    #[test]
    fn fourier_recurrence_matches_direct_sum() {
        let f = build_model_three(3.0).unwrap();
        for k in 0..200 {
            let x = -1.0 + 0.023 * k as f64;
            let mut direct = 0.5 * f.a_coeffs[0];
            for i in 1..=FOURIER_ORDER {
                let arg = 2.0 * i as f64 * x;
                direct += f.a_coeffs[i] * arg.cos() + f.b_coeffs[i - 1] * arg.sin();
            }
            assert!((f.eval(x) - direct).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn model_ids_round_trip() {
        for id in ModelId::ALL {
            assert_eq!(id.to_string().parse::<ModelId>().unwrap(), id);
        }
        assert!("V".parse::<ModelId>().is_err());
    }

    #[test]
    fn perfect_model_has_no_error() {
        let sys = RickerSystem { lambda: 3.0 };
        let errs = model_error_histogram(&sys, 3.0, 256, 2, 5).unwrap();
        assert!(errs.iter().all(|e| e.error == 0.0));
    }
}
