//! Predictive densities built from ensembles, and the Ignorance score.
//!
//! An ensemble becomes a density by placing a Gaussian kernel of width
//! `sigma` on every member (kernel dressing). The dressed density is then
//! blended with a climatological density, `alpha p_m + (1 - alpha) p_c`,
//! and several blended densities can be mixed with model weights.

use std::f64::consts::{LN_2, PI};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::output::fmt_f64;
use crate::quadrature;
use crate::stats;

/// `1 / sqrt(2 pi)`
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Tolerance on the sum of multi-model weights.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// Minimum number of observations behind a climatology.
pub const MIN_CLIMATOLOGY_SAMPLE: usize = 2048;

#[inline]
pub fn gaussian_kernel(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// A univariate density that is a finite Gaussian mixture.
pub trait Density {
    fn pdf(&self, y: f64) -> f64;

    /// `(center, width)` of every kernel carrying mass.
    fn kernels(&self) -> Vec<(f64, f64)>;
}

/// Equal-weight Gaussian mixture centred on ensemble members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DressedDensity {
    centers: Vec<f64>,
    sigma: f64,
}

impl DressedDensity {
    pub fn new(centers: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kernel width must be positive, got {sigma}"
            )));
        }
        if centers.is_empty() || centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter(
                "dressing needs at least one finite ensemble member".into(),
            ));
        }
        Ok(Self { centers, sigma })
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Dressed density of `centers` at `y`, without argument checks.
#[inline]
pub fn dressed_value(centers: &[f64], sigma: f64, y: f64) -> f64 {
    let inv = 1.0 / sigma;
    let s: f64 = centers.iter().map(|&c| gaussian_kernel((y - c) * inv)).sum();
    s * inv / centers.len() as f64
}

impl Density for DressedDensity {
    fn pdf(&self, y: f64) -> f64 {
        dressed_value(&self.centers, self.sigma, y)
    }

    fn kernels(&self) -> Vec<(f64, f64)> {
        self.centers.iter().map(|&c| (c, self.sigma)).collect()
    }
}

pub fn dressed_pdf(d: &DressedDensity, y: f64) -> f64 {
    d.pdf(y)
}

/// Gaussian kernel density estimate of the system's stationary distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Climatology {
    sample: Vec<f64>,
    bandwidth: f64,
}

/// Silverman's rule of thumb, `0.9 min(sd, IQR / 1.34) n^(-1/5)`.
pub fn silverman_bandwidth(sample: &[f64]) -> f64 {
    let sd = stats::std_dev(sample);
    let iqr = stats::percentile(sample, 75.0) - stats::percentile(sample, 25.0);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (sample.len() as f64).powf(-0.2)
}

impl Climatology {
    /// Kernel density estimate with Silverman bandwidth.
    pub fn from_sample(sample: Vec<f64>) -> Result<Self> {
        Self::check_sample(&sample)?;
        let bandwidth = silverman_bandwidth(&sample);
        Self::with_bandwidth(sample, bandwidth)
    }

    pub fn with_bandwidth(sample: Vec<f64>, bandwidth: f64) -> Result<Self> {
        Self::check_sample(&sample)?;
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "climatology bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(Self { sample, bandwidth })
    }

    fn check_sample(sample: &[f64]) -> Result<()> {
        if sample.len() < MIN_CLIMATOLOGY_SAMPLE {
            return Err(Error::InvalidParameter(format!(
                "climatology needs at least {MIN_CLIMATOLOGY_SAMPLE} observations, got {}",
                sample.len()
            )));
        }
        if sample.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("climatology sample must be finite".into()));
        }
        Ok(())
    }

    pub fn sample(&self) -> &[f64] {
        &self.sample
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
}

impl Density for Climatology {
    fn pdf(&self, y: f64) -> f64 {
        dressed_value(&self.sample, self.bandwidth, y)
    }

    fn kernels(&self) -> Vec<(f64, f64)> {
        self.sample.iter().map(|&c| (c, self.bandwidth)).collect()
    }
}

pub fn climatology_pdf(c: &Climatology, y: f64) -> f64 {
    c.pdf(y)
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {v}")))
    }
}

/// `alpha p_m + (1 - alpha) p_c`
#[derive(Debug, Clone)]
pub struct BlendedDensity<'a> {
    pub model_part: DressedDensity,
    pub climo: &'a Climatology,
    alpha: f64,
}

impl<'a> BlendedDensity<'a> {
    pub fn new(model_part: DressedDensity, climo: &'a Climatology, alpha: f64) -> Result<Self> {
        check_unit("alpha", alpha)?;
        Ok(Self {
            model_part,
            climo,
            alpha,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl Density for BlendedDensity<'_> {
    fn pdf(&self, y: f64) -> f64 {
        match self.alpha {
            1.0 => self.model_part.pdf(y),
            0.0 => self.climo.pdf(y),
            a => blend(a, self.model_part.pdf(y), self.climo.pdf(y)),
        }
    }

    fn kernels(&self) -> Vec<(f64, f64)> {
        let mut k = Vec::new();
        if self.alpha > 0.0 {
            k.extend(self.model_part.kernels());
        }
        if self.alpha < 1.0 {
            k.extend(self.climo.kernels());
        }
        k
    }
}

/// `alpha pm + (1 - alpha) pc`, exact at the endpoints.
#[inline]
pub fn blend(alpha: f64, pm: f64, pc: f64) -> f64 {
    if alpha == 1.0 {
        pm
    } else if alpha == 0.0 {
        pc
    } else {
        alpha * pm + (1.0 - alpha) * pc
    }
}

pub fn blended_pdf(b: &BlendedDensity<'_>, y: f64) -> f64 {
    b.pdf(y)
}

/// Convex combination weights over models at one lead time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    omega: Vec<f64>,
}

impl WeightVector {
    pub fn new(omega: Vec<f64>) -> Result<Self> {
        if omega.is_empty() {
            return Err(Error::InvalidParameter("weight vector is empty".into()));
        }
        for &w in &omega {
            check_unit("model weight", w)?;
        }
        let sum: f64 = omega.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "model weights must sum to 1, got {sum}"
            )));
        }
        Ok(Self { omega })
    }

    /// All mass on model `index`.
    pub fn one_hot(len: usize, index: usize) -> Self {
        let mut omega = vec![0.0; len];
        omega[index] = 1.0;
        Self { omega }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.omega
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    /// `sum_i omega_i p_i` from component density values.
    pub fn combine(&self, values: &[f64]) -> f64 {
        self.omega
            .iter()
            .zip(values)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, p)| w * p)
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct MultiModelDensity<'a> {
    pub components: Vec<BlendedDensity<'a>>,
    pub weights: WeightVector,
}

impl<'a> MultiModelDensity<'a> {
    pub fn new(components: Vec<BlendedDensity<'a>>, weights: WeightVector) -> Result<Self> {
        if components.len() != weights.len() {
            return Err(Error::InvalidParameter(format!(
                "{} components but {} weights",
                components.len(),
                weights.len()
            )));
        }
        Ok(Self {
            components,
            weights,
        })
    }
}

impl Density for MultiModelDensity<'_> {
    fn pdf(&self, y: f64) -> f64 {
        let values: Vec<f64> = self
            .weights
            .as_slice()
            .iter()
            .zip(&self.components)
            .map(|(&w, c)| if w > 0.0 { c.pdf(y) } else { 0.0 })
            .collect();
        self.weights.combine(&values)
    }

    fn kernels(&self) -> Vec<(f64, f64)> {
        self.weights
            .as_slice()
            .iter()
            .zip(&self.components)
            .filter(|(w, _)| **w > 0.0)
            .flat_map(|(_, c)| c.kernels())
            .collect()
    }
}

pub fn multimodel_pdf(m: &MultiModelDensity<'_>, y: f64) -> f64 {
    m.pdf(y)
}

/// Ignorance in bits, `-log2 p`. A zero density yields `+inf`.
pub fn ignorance(p_at_outcome: f64) -> Result<f64> {
    if p_at_outcome.is_nan() || p_at_outcome < 0.0 {
        return Err(Error::Domain(format!(
            "density at outcome must be non-negative, got {p_at_outcome}"
        )));
    }
    Ok(ignorance_bits(p_at_outcome))
}

#[inline]
pub(crate) fn ignorance_bits(p: f64) -> f64 {
    -p.ln() / LN_2
}

/// Mean Ignorance over a set of forecast-outcome pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalScore {
    /// Mean score in bits; `+inf` when any pair is a bust.
    pub mean_bits: f64,
    pub n: usize,
    /// Pairs whose density at the outcome was exactly zero.
    pub busts: usize,
}

pub fn empirical_ignorance(densities: &[f64]) -> Result<EmpiricalScore> {
    if densities.is_empty() {
        return Err(Error::InvalidParameter(
            "empirical ignorance needs at least one pair".into(),
        ));
    }
    let mut sum = 0.0;
    let mut busts = 0;
    for &p in densities {
        let s = ignorance(p)?;
        if s.is_infinite() {
            busts += 1;
        }
        sum += s;
    }
    Ok(EmpiricalScore {
        mean_bits: sum / densities.len() as f64,
        n: densities.len(),
        busts,
    })
}

/// Differential entropy of `N(mu, sd^2)` in bits.
pub fn gaussian_entropy_bits(sd: f64) -> f64 {
    0.5 * (2.0 * PI * std::f64::consts::E * sd * sd).log2()
}

/// Total mass of a mixture density by adaptive quadrature.
///
/// The real line is cut into pieces no wider than half the narrowest kernel
/// active there, covering 12 kernel widths either side of every center.
pub fn total_mass(d: &dyn Density, tol: f64) -> Result<f64> {
    const REACH: f64 = 12.0;
    let mut ks = d.kernels();
    if ks.is_empty() {
        return Ok(0.0);
    }
    ks.sort_by(|a, b| (a.0 - REACH * a.1).total_cmp(&(b.0 - REACH * b.1)));
    let lo = ks[0].0 - REACH * ks[0].1;
    let hi = ks
        .iter()
        .map(|(c, w)| c + REACH * w)
        .fold(f64::NEG_INFINITY, f64::max);

    let mut breaks = vec![lo];
    let mut y = lo;
    while y < hi {
        let active = ks
            .iter()
            .filter(|(c, w)| y >= c - REACH * w && y < c + REACH * w)
            .map(|(_, w)| *w)
            .fold(f64::INFINITY, f64::min);
        y = if active.is_finite() {
            y + 0.5 * active
        } else {
            ks.iter()
                .map(|(c, w)| c - REACH * w)
                .filter(|&s| s > y)
                .fold(hi, f64::min)
        };
        breaks.push(y.min(hi));
    }
    let per_piece = tol / breaks.len() as f64;
    let mut mass = 0.0;
    for pair in breaks.windows(2) {
        if pair[1] > pair[0] {
            mass += quadrature::integrate(|x| d.pdf(x), pair[0], pair[1], per_piece, 200)?.value;
        }
    }
    Ok(mass)
}

/// Writes `(y, pdf)` on `n` evenly spaced points of `[lo, hi]`.
pub fn write_density_grid<W: Write>(writer: W, d: &dyn Density, lo: f64, hi: f64, n: usize) -> Result<()> {
    if n < 2 || !(hi > lo) {
        return Err(Error::InvalidParameter(format!(
            "grid needs lo < hi and at least 2 points, got [{lo}, {hi}] with {n}"
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["y", "pdf"])?;
    for i in 0..n {
        let y = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        w.write_record([fmt_f64(y), fmt_f64(d.pdf(y))])?;
    }
    w.flush()?;
    Ok(())
}
