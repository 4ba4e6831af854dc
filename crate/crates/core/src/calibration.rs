//! Parameter fitting by minimising empirical Ignorance.
//!
//! All searches are deterministic grid searches: a coarse grid followed by
//! a fixed number of refinement rounds, each spanning one coarse cell either
//! side of the incumbent. Ties resolve toward the more climatological choice
//! (smaller `alpha`, then smaller `sigma`, then smaller `kappa`); for model
//! weights, toward the higher-ranked model.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use serde::{Deserialize, Serialize};

use crate::density::{blend, dressed_value, ignorance_bits, Climatology, Density, WeightVector};
use crate::error::{Error, Result};
use crate::models::Dynamics;
use crate::output::{fmt_f64, parse_key_values, render_key_values};
use crate::{ensemble, seed};

/// Scores closer than this are treated as tied when combining models.
pub const WEIGHT_TIE_TOLERANCE: f64 = 1e-12;

/// Minimum number of lead-1 launches `fit_kappa` will work with.
pub const MIN_KAPPA_LAUNCHES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridScale {
    Linear,
    Log,
}

impl fmt::Display for GridScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridScale::Linear => "linear",
            GridScale::Log => "log",
        })
    }
}

impl FromStr for GridScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(GridScale::Linear),
            "log" => Ok(GridScale::Log),
            other => Err(Error::Parse(format!("unknown grid scale {other:?}"))),
        }
    }
}

/// A one-dimensional search grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub scale: GridScale,
}

impl GridSpec {
    pub const fn log(lo: f64, hi: f64, points: usize) -> Self {
        Self { lo, hi, points, scale: GridScale::Log }
    }

    pub const fn linear(lo: f64, hi: f64, points: usize) -> Self {
        Self { lo, hi, points, scale: GridScale::Linear }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let ok = self.points >= 1
            && self.lo.is_finite()
            && self.hi.is_finite()
            && self.lo <= self.hi
            && (self.points == 1 || self.lo < self.hi)
            && (self.scale == GridScale::Linear || self.lo > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid {name} grid {self:?}")))
        }
    }

    fn to_axis(self, v: f64) -> f64 {
        match self.scale {
            GridScale::Linear => v,
            GridScale::Log => v.ln(),
        }
    }

    fn axis_value(self, u: f64) -> f64 {
        match self.scale {
            GridScale::Linear => u,
            GridScale::Log => u.exp(),
        }
    }

    fn span(self, a: f64, b: f64, n: usize) -> Vec<f64> {
        if n == 1 || a == b {
            return vec![self.axis_value(a)];
        }
        (0..n)
            .map(|i| {
                // pin the endpoints so bounds are hit exactly
                if i == 0 {
                    self.axis_value(a)
                } else if i == n - 1 {
                    self.axis_value(b)
                } else {
                    self.axis_value(a + (b - a) * i as f64 / (n - 1) as f64)
                }
            })
            .collect()
    }

    /// Points of the coarse grid.
    pub fn values(&self) -> Vec<f64> {
        let mut v = self.span(self.to_axis(self.lo), self.to_axis(self.hi), self.points);
        v[0] = self.lo;
        if self.points > 1 {
            *v.last_mut().unwrap() = self.hi;
        }
        v
    }

    /// Coarse cell width in axis units (log units for log grids).
    fn cell(&self) -> f64 {
        if self.points <= 1 {
            0.0
        } else {
            (self.to_axis(self.hi) - self.to_axis(self.lo)) / (self.points - 1) as f64
        }
    }

    fn at_bound(&self, v: f64) -> bool {
        v == self.lo || v == self.hi
    }
}

/// Iteratively narrowed search window along one grid axis.
struct Refiner {
    grid: GridSpec,
    half_width: f64,
    points: usize,
}

impl Refiner {
    fn new(grid: GridSpec, points: usize) -> Self {
        Self { grid, half_width: grid.cell(), points }
    }

    /// Next round's points around `center`, clipped to the outer bounds.
    fn next_round(&mut self, center: f64) -> Vec<f64> {
        let g = self.grid;
        let c = g.to_axis(center);
        let a = (c - self.half_width).max(g.to_axis(g.lo));
        let b = (c + self.half_width).min(g.to_axis(g.hi));
        let mut pts = g.span(a, b, self.points);
        // clipped ends map back onto the exact bounds
        if a == g.to_axis(g.lo) {
            pts[0] = g.lo;
        }
        if b == g.to_axis(g.hi) {
            *pts.last_mut().unwrap() = g.hi;
        }
        if !pts.contains(&center) {
            pts.push(center);
        }
        if self.points > 1 {
            self.half_width *= 2.0 / (self.points - 1) as f64;
        }
        pts
    }
}

/// Search grids for every fitted quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub sigma_grid: GridSpec,
    pub alpha_grid: GridSpec,
    pub kappa_grid: GridSpec,
    pub weight_grid: GridSpec,
    pub refinement_rounds: usize,
    /// Points per refinement round along each axis.
    pub refinement_points: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            sigma_grid: GridSpec::log(1e-4, 10.0, 33),
            alpha_grid: GridSpec::linear(0.0, 1.0, 21),
            kappa_grid: GridSpec::log(1e-4, 1.0, 33),
            weight_grid: GridSpec::linear(0.0, 1.0, 21),
            refinement_rounds: 3,
            refinement_points: 17,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.sigma_grid.validate("sigma")?;
        self.alpha_grid.validate("alpha")?;
        self.kappa_grid.validate("kappa")?;
        self.weight_grid.validate("weight")?;
        if self.sigma_grid.lo <= 0.0 || self.kappa_grid.lo <= 0.0 {
            return Err(Error::InvalidParameter("sigma and kappa grids must be positive".into()));
        }
        if self.alpha_grid.lo < 0.0 || self.alpha_grid.hi > 1.0 {
            return Err(Error::InvalidParameter("alpha grid must lie in [0, 1]".into()));
        }
        if self.weight_grid.lo < 0.0 || self.weight_grid.hi > 1.0 {
            return Err(Error::InvalidParameter("weight grid must lie in [0, 1]".into()));
        }
        if self.refinement_points == 0 {
            return Err(Error::InvalidParameter("refinement needs at least one point".into()));
        }
        Ok(())
    }
}

/// Forecast-outcome pairs of one model at one lead time, ready for scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    n_members: usize,
    /// Row-major `(pair, member)`.
    members: Vec<f64>,
    outcomes: Vec<f64>,
    /// Climatological density at each outcome.
    climo_at_outcome: Vec<f64>,
}

impl PairSet {
    pub fn new(
        n_members: usize,
        members: Vec<f64>,
        outcomes: Vec<f64>,
        climo_at_outcome: Vec<f64>,
    ) -> Result<Self> {
        if n_members == 0
            || members.len() != n_members * outcomes.len()
            || climo_at_outcome.len() != outcomes.len()
        {
            return Err(Error::InvalidParameter(format!(
                "inconsistent pair set: {} members of width {n_members}, {} outcomes, {} climatology values",
                members.len(),
                outcomes.len(),
                climo_at_outcome.len()
            )));
        }
        Ok(Self {
            n_members,
            members,
            outcomes,
            climo_at_outcome,
        })
    }

    /// Builds a pair set evaluating `climo` at each outcome.
    pub fn with_climatology(
        n_members: usize,
        members: Vec<f64>,
        outcomes: Vec<f64>,
        climo: &Climatology,
    ) -> Result<Self> {
        let pc = outcomes.iter().map(|&y| climo.pdf(y)).collect();
        Self::new(n_members, members, outcomes, pc)
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn n_members(&self) -> usize {
        self.n_members
    }

    pub fn members(&self, pair: usize) -> &[f64] {
        &self.members[pair * self.n_members..(pair + 1) * self.n_members]
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn climo_at_outcome(&self) -> &[f64] {
        &self.climo_at_outcome
    }

    /// Dressed (model-only) density at every outcome.
    pub fn dressed_at_outcomes(&self, sigma: f64) -> Vec<f64> {
        (0..self.len())
            .map(|i| dressed_value(self.members(i), sigma, self.outcomes[i]))
            .collect()
    }

    /// Blended density at every outcome.
    pub fn blended_at_outcomes(&self, sigma: f64, alpha: f64) -> Vec<f64> {
        self.dressed_at_outcomes(sigma)
            .iter()
            .zip(&self.climo_at_outcome)
            .map(|(&pm, &pc)| blend(alpha, pm, pc))
            .collect()
    }

    /// Empirical Ignorance of the blended forecasts.
    pub fn score(&self, sigma: f64, alpha: f64) -> f64 {
        mean_ignorance(&self.blended_at_outcomes(sigma, alpha))
    }

    /// Pairs at the given indices.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut members = Vec::with_capacity(idx.len() * self.n_members);
        for &i in idx {
            members.extend_from_slice(self.members(i));
        }
        Self {
            n_members: self.n_members,
            members,
            outcomes: idx.iter().map(|&i| self.outcomes[i]).collect(),
            climo_at_outcome: idx.iter().map(|&i| self.climo_at_outcome[i]).collect(),
        }
    }

    /// The same pairs keeping only the first `n` members of each ensemble.
    pub fn truncate_members(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n_members {
            return Err(Error::InvalidParameter(format!(
                "cannot keep {n} of {} members",
                self.n_members
            )));
        }
        let mut members = Vec::with_capacity(self.len() * n);
        for i in 0..self.len() {
            members.extend_from_slice(&self.members(i)[..n]);
        }
        Self::new(n, members, self.outcomes.clone(), self.climo_at_outcome.clone())
    }
}

/// Mean of `-log2 p` over densities; `+inf` if any density is zero.
pub fn mean_ignorance(densities: &[f64]) -> f64 {
    densities.iter().map(|&p| ignorance_bits(p)).sum::<f64>() / densities.len() as f64
}

fn blend_score(pm: &[f64], pc: &[f64], alpha: f64) -> f64 {
    let s: f64 = pm
        .iter()
        .zip(pc)
        .map(|(&m, &c)| ignorance_bits(blend(alpha, m, c)))
        .sum();
    s / pm.len() as f64
}

/// Held-out score averaged over leave-one-out folds.
fn loo_blend_score(pm: &[f64], pc: &[f64], alpha: f64) -> f64 {
    let n = pm.len();
    let mut total = 0.0;
    for fold in 0..n {
        // the candidate is shared by every fold, so only the held-out pair
        // contributes to the fold's score
        total += ignorance_bits(blend(alpha, pm[fold], pc[fold]));
    }
    total / n as f64
}

/// Result of a `(sigma, alpha)` fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaAlphaFit {
    pub sigma: f64,
    pub alpha: f64,
    /// Value of the minimised criterion, in bits.
    pub training_ignorance: f64,
    /// Pairs with zero density at the fitted parameters.
    pub busts: usize,
    pub sigma_at_bound: bool,
    pub alpha_at_bound: bool,
}

#[derive(Clone, Copy)]
struct Candidate {
    score: f64,
    alpha: f64,
    sigma: f64,
}

impl Candidate {
    fn beats(&self, other: &Candidate) -> bool {
        let s = if self.score.is_nan() { f64::INFINITY } else { self.score };
        let o = if other.score.is_nan() { f64::INFINITY } else { other.score };
        s < o || (s == o && (self.alpha, self.sigma) < (other.alpha, other.sigma))
    }
}

/// Refined 2-D grid search. `eval(sigma, alphas)` scores every `alpha` at
/// one `sigma`.
fn search_grid<F>(config: &FitConfig, mut eval: F) -> Candidate
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    let mut best: Option<Candidate> = None;
    let mut visit = |sigmas: &[f64], alphas: &[f64], best: &mut Option<Candidate>| {
        for &sigma in sigmas {
            for (score, &alpha) in eval(sigma, alphas).into_iter().zip(alphas) {
                let c = Candidate { score, alpha, sigma };
                if best.is_none_or(|b| c.beats(&b)) {
                    *best = Some(c);
                }
            }
        }
    };
    visit(&config.sigma_grid.values(), &config.alpha_grid.values(), &mut best);
    let mut sigma_axis = Refiner::new(config.sigma_grid, config.refinement_points);
    let mut alpha_axis = Refiner::new(config.alpha_grid, config.refinement_points);
    for _ in 0..config.refinement_rounds {
        let b = best.expect("coarse grid is non-empty");
        let sigmas = sigma_axis.next_round(b.sigma);
        let alphas = alpha_axis.next_round(b.alpha);
        visit(&sigmas, &alphas, &mut best);
    }
    best.expect("coarse grid is non-empty")
}

const ALL_INFINITE: &str =
    "every (sigma, alpha) candidate has infinite Ignorance; the climatology assigns zero density to an outcome";

fn search_sigma_alpha(
    pairs: &PairSet,
    config: &FitConfig,
    criterion: fn(&[f64], &[f64], f64) -> f64,
) -> Result<SigmaAlphaFit> {
    config.validate()?;
    let pc = pairs.climo_at_outcome();
    let b = search_grid(config, |sigma, alphas| {
        let pm = pairs.dressed_at_outcomes(sigma);
        alphas.iter().map(|&a| criterion(&pm, pc, a)).collect()
    });
    if !b.score.is_finite() {
        return Err(Error::Fit(ALL_INFINITE.into()));
    }
    let busts = pairs
        .blended_at_outcomes(b.sigma, b.alpha)
        .iter()
        .filter(|&&p| p == 0.0)
        .count();
    Ok(SigmaAlphaFit {
        sigma: b.sigma,
        alpha: b.alpha,
        training_ignorance: b.score,
        busts,
        sigma_at_bound: config.sigma_grid.at_bound(b.sigma),
        alpha_at_bound: config.alpha_grid.at_bound(b.alpha),
    })
}

/// Kernel width and climatology blend weight minimising training Ignorance.
pub fn fit_sigma_alpha(pairs: &PairSet, config: &FitConfig) -> Result<SigmaAlphaFit> {
    if pairs.len() < 2 {
        return Err(Error::Fit(format!("need at least 2 pairs, got {}", pairs.len())));
    }
    search_sigma_alpha(pairs, config, blend_score)
}

/// Kernel width and blend weight minimising the mean leave-one-out Ignorance.
///
/// Candidates are grid points shared across folds and the climatology is
/// fixed, so each fold's held-out score depends only on the pair it holds
/// out.
pub fn fit_loo(pairs: &PairSet, config: &FitConfig) -> Result<SigmaAlphaFit> {
    if pairs.len() < 3 {
        return Err(Error::Fit(format!(
            "leave-one-out needs at least 3 pairs, got {}",
            pairs.len()
        )));
    }
    search_sigma_alpha(pairs, config, loo_blend_score)
}

/// Density at each outcome from `(sigma, alpha)` fitted on all other pairs.
///
/// Equal to refitting [`fit_sigma_alpha`] on every leave-one-out subset;
/// per-pair scores are cached because folds visit nearly the same
/// candidates.
pub fn held_out_densities(pairs: &PairSet, config: &FitConfig) -> Result<Vec<f64>> {
    let n = pairs.len();
    if n < 3 {
        return Err(Error::Fit(format!(
            "leave-one-out needs at least 3 pairs, got {n}"
        )));
    }
    config.validate()?;
    let pc = pairs.climo_at_outcome();
    let mut dressed: HashMap<u64, Vec<f64>> = HashMap::new();
    let mut per_pair: HashMap<(u64, u64), Vec<f64>> = HashMap::new();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let best = search_grid(config, |sigma, alphas| {
            let pm = dressed
                .entry(sigma.to_bits())
                .or_insert_with(|| pairs.dressed_at_outcomes(sigma));
            alphas
                .iter()
                .map(|&alpha| {
                    let bits = per_pair.entry((sigma.to_bits(), alpha.to_bits())).or_insert_with(|| {
                        pm.iter()
                            .zip(pc)
                            .map(|(&m, &c)| ignorance_bits(blend(alpha, m, c)))
                            .collect()
                    });
                    let total: f64 = bits
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| i != k)
                        .map(|(_, &b)| b)
                        .sum();
                    total / (n - 1) as f64
                })
                .collect()
        });
        if !best.score.is_finite() {
            return Err(Error::Fit(ALL_INFINITE.into()));
        }
        let pm = &dressed[&best.sigma.to_bits()];
        out.push(blend(best.alpha, pm[k], pc[k]));
    }
    Ok(out)
}

/// Lead-time scoring problem for choosing the perturbation scale of one
/// model: training launches fit `(sigma, alpha)`, validation launches score.
pub struct KappaProblem<'a> {
    pub model: &'a dyn Dynamics,
    pub n_members: usize,
    /// `(observation at launch, launch seed)` for training launches.
    pub train_launches: Vec<(f64, u64)>,
    pub valid_launches: Vec<(f64, u64)>,
    /// Per launch, per lead: `(outcome, climatological density at outcome)`.
    pub train_outcomes: Vec<Vec<(f64, f64)>>,
    pub valid_outcomes: Vec<Vec<(f64, f64)>>,
    pub leads: Vec<usize>,
}

impl KappaProblem<'_> {
    fn pairsets(
        &self,
        launches: &[(f64, u64)],
        outcomes: &[Vec<(f64, f64)>],
        kappa: f64,
    ) -> Result<Vec<PairSet>> {
        let max_lead = *self.leads.iter().max().unwrap();
        let n = self.n_members;
        let mut members: Vec<Vec<f64>> = vec![Vec::with_capacity(launches.len() * n); self.leads.len()];
        for &(obs, s) in launches {
            let initials = ensemble::make_ensemble(obs, n, kappa, s)?;
            let fc = ensemble::propagate(self.model, &initials, max_lead)?;
            for (slot, &lead) in self.leads.iter().enumerate() {
                members[slot].extend_from_slice(fc.lead(lead));
            }
        }
        members
            .into_iter()
            .zip(&self.leads)
            .map(|(m, &lead)| {
                let (y, pc): (Vec<f64>, Vec<f64>) = outcomes.iter().map(|o| o[lead - 1]).unzip();
                PairSet::new(n, m, y, pc)
            })
            .collect()
    }

    /// Validation Ignorance at every lead for perturbation scale `kappa`.
    /// A forecast that leaves the model's domain scores `+inf`.
    pub fn score(&self, kappa: f64, config: &FitConfig) -> Result<Vec<f64>> {
        let built = self
            .pairsets(&self.train_launches, &self.train_outcomes, kappa)
            .and_then(|train| {
                let valid = self.pairsets(&self.valid_launches, &self.valid_outcomes, kappa)?;
                Ok((train, valid))
            });
        let (train, valid) = match built {
            Ok(v) => v,
            Err(Error::Propagation { .. }) | Err(Error::Domain(_)) => {
                return Ok(vec![f64::INFINITY; self.leads.len()])
            }
            Err(e) => return Err(e),
        };
        train
            .iter()
            .zip(&valid)
            .map(|(t, v)| match fit_sigma_alpha(t, config) {
                Ok(fit) => Ok(v.score(fit.sigma, fit.alpha)),
                Err(Error::Fit(_)) => Ok(f64::INFINITY),
                Err(e) => Err(e),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaFit {
    pub kappa: f64,
    pub validation_ignorance: f64,
    pub at_bound: bool,
}

/// One-dimensional refined search for the `kappa` minimising `objective`,
/// evaluated in parallel. Ties go to the smaller `kappa`.
pub fn search_kappa<F>(grid: GridSpec, config: &FitConfig, objective: F) -> Result<KappaFit>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    grid.validate("kappa")?;
    let eval = |ks: Vec<f64>| -> Result<Vec<(f64, f64)>> {
        ks.into_par_iter()
            .map(|k| objective(k).map(|s| (k, if s.is_nan() { f64::INFINITY } else { s })))
            .collect()
    };
    let pick = |best: Option<(f64, f64)>, cands: Vec<(f64, f64)>| {
        cands.into_iter().fold(best, |b, c| match b {
            None => Some(c),
            Some(b) if c.1 < b.1 || (c.1 == b.1 && c.0 < b.0) => Some(c),
            keep => keep,
        })
    };
    let mut best = pick(None, eval(grid.values())?);
    let mut axis = Refiner::new(grid, config.refinement_points);
    for _ in 0..config.refinement_rounds {
        let center = best.unwrap().0;
        best = pick(best, eval(axis.next_round(center))?);
    }
    let (kappa, score) = best.unwrap();
    if !score.is_finite() {
        return Err(Error::Fit("every kappa candidate has infinite Ignorance".into()));
    }
    Ok(KappaFit {
        kappa,
        validation_ignorance: score,
        at_bound: grid.at_bound(kappa),
    })
}

/// Perturbation scale minimising lead-1 Ignorance for `model`.
///
/// Launches are taken at every observation that has a successor; the first
/// half of them fits `(sigma, alpha)` and the second half scores. Launch `t`
/// draws its ensemble from `seed::derive(rng_seed, [t])` for every
/// candidate, so candidates share their random numbers.
pub fn fit_kappa(
    model: &dyn Dynamics,
    obs: &[f64],
    climo: &Climatology,
    n_members: usize,
    config: &FitConfig,
    rng_seed: u64,
) -> Result<KappaFit> {
    let launches = obs.len().saturating_sub(1);
    if launches < MIN_KAPPA_LAUNCHES {
        return Err(Error::InvalidParameter(format!(
            "kappa fitting needs at least {MIN_KAPPA_LAUNCHES} launches, got {launches}"
        )));
    }
    let pc: Vec<f64> = obs.iter().map(|&y| climo.pdf(y)).collect();
    let half = launches / 2;
    let launch = |t: usize| (obs[t], seed::derive(rng_seed, &[t as u64]));
    let outcome = |t: usize| vec![(obs[t + 1], pc[t + 1])];
    let problem = KappaProblem {
        model,
        n_members,
        train_launches: (0..half).map(launch).collect(),
        valid_launches: (half..launches).map(launch).collect(),
        train_outcomes: (0..half).map(outcome).collect(),
        valid_outcomes: (half..launches).map(outcome).collect(),
        leads: vec![1],
    };
    search_kappa(config.kappa_grid, config, |k| Ok(problem.score(k, config)?[0]))
}

/// Multi-model weights from greedy pairwise combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFit {
    pub weights: WeightVector,
    /// Model indices ordered from best to worst individual Ignorance.
    pub ranking: Vec<usize>,
    /// Individual training Ignorance per model, in model order.
    pub individual_ignorance: Vec<f64>,
    /// Training Ignorance of the weighted combination.
    pub training_ignorance: f64,
}

fn search_weight(current: &[f64], next: &[f64], config: &FitConfig) -> f64 {
    let score = |w: f64| {
        current
            .iter()
            .zip(next)
            .map(|(&c, &n)| ignorance_bits(if w == 1.0 { c } else { w * c + (1.0 - w) * n }))
            .sum::<f64>()
            / current.len() as f64
    };
    // w = 1 (everything on the higher-ranked side) is the incumbent; a
    // candidate must beat it by more than the tie tolerance.
    let mut best = (1.0, score(1.0));
    let consider = |ws: &[f64], best: &mut (f64, f64)| {
        let mut ws = ws.to_vec();
        ws.sort_by(|a, b| b.total_cmp(a));
        for w in ws {
            let s = score(w);
            if s < best.1 - WEIGHT_TIE_TOLERANCE || (best.1.is_infinite() && s < best.1) {
                *best = (w, s);
            }
        }
    };
    consider(&config.weight_grid.values(), &mut best);
    let mut axis = Refiner::new(config.weight_grid, config.refinement_points);
    for _ in 0..config.refinement_rounds {
        let pts = axis.next_round(best.0);
        consider(&pts, &mut best);
    }
    best.0
}

/// Combines models greedily: rank by individual Ignorance, then blend the
/// running combination with each next-ranked model using the scalar weight
/// that minimises Ignorance, and finally unroll the nesting into one weight
/// per model.
///
/// `densities[m][k]` is model `m`'s density at outcome `k`.
pub fn fit_weights_iterative(densities: &[Vec<f64>], config: &FitConfig) -> Result<WeightFit> {
    if densities.is_empty() {
        return Err(Error::InvalidParameter("combination needs at least one model".into()));
    }
    let k = densities[0].len();
    if k == 0 || densities.iter().any(|d| d.len() != k) {
        return Err(Error::InvalidParameter(
            "every model needs a density at every outcome".into(),
        ));
    }
    if densities.iter().flatten().any(|p| !(*p >= 0.0) || p.is_infinite()) {
        return Err(Error::InvalidParameter("densities must be finite and non-negative".into()));
    }
    config.validate()?;
    let individual: Vec<f64> = densities.iter().map(|d| mean_ignorance(d)).collect();
    let mut ranking: Vec<usize> = (0..densities.len()).collect();
    ranking.sort_by(|&a, &b| individual[a].total_cmp(&individual[b]).then(a.cmp(&b)));

    let mut omega = vec![0.0; densities.len()];
    omega[ranking[0]] = 1.0;
    let mut current = densities[ranking[0]].clone();
    for &m in &ranking[1..] {
        let w = search_weight(&current, &densities[m], config);
        if w < 1.0 {
            for (c, &n) in current.iter_mut().zip(&densities[m]) {
                *c = w * *c + (1.0 - w) * n;
            }
            omega.iter_mut().for_each(|o| *o *= w);
            omega[m] = 1.0 - w;
        }
    }
    let weights = WeightVector::new(omega)?;
    let combined: Vec<f64> = (0..k)
        .map(|i| {
            let vals: Vec<f64> = densities.iter().map(|d| d[i]).collect();
            weights.combine(&vals)
        })
        .collect();
    Ok(WeightFit {
        training_ignorance: mean_ignorance(&combined),
        weights,
        ranking,
        individual_ignorance: individual,
    })
}

/// Every fitted quantity of one forecast system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedParams {
    pub model_names: Vec<String>,
    pub kappa: Vec<f64>,
    /// `per_lead[model][lead - 1]`
    pub per_lead: Vec<Vec<SigmaAlphaFit>>,
    /// `weights[lead - 1]`
    pub weights: Vec<WeightFit>,
}

impl FittedParams {
    /// Flat `key = value` rendering recording grids, fits and scores.
    pub fn to_key_values(&self, config: &FitConfig) -> String {
        let mut kv: Vec<(String, String)> = Vec::new();
        for (name, g) in [
            ("sigma", &config.sigma_grid),
            ("alpha", &config.alpha_grid),
            ("kappa", &config.kappa_grid),
            ("weight", &config.weight_grid),
        ] {
            kv.push((format!("grid.{name}.lo"), fmt_f64(g.lo)));
            kv.push((format!("grid.{name}.hi"), fmt_f64(g.hi)));
            kv.push((format!("grid.{name}.points"), g.points.to_string()));
            kv.push((format!("grid.{name}.scale"), g.scale.to_string()));
        }
        kv.push(("grid.refinement_rounds".into(), config.refinement_rounds.to_string()));
        kv.push(("grid.refinement_points".into(), config.refinement_points.to_string()));
        kv.push(("models".into(), self.model_names.join(",")));
        kv.push(("max_lead".into(), self.weights.len().to_string()));
        for (m, name) in self.model_names.iter().enumerate() {
            kv.push((format!("model.{name}.kappa"), fmt_f64(self.kappa[m])));
            for (l, fit) in self.per_lead[m].iter().enumerate() {
                let p = format!("model.{name}.lead.{}", l + 1);
                kv.push((format!("{p}.sigma"), fmt_f64(fit.sigma)));
                kv.push((format!("{p}.alpha"), fmt_f64(fit.alpha)));
                kv.push((format!("{p}.training_ignorance"), fmt_f64(fit.training_ignorance)));
                kv.push((format!("{p}.busts"), fit.busts.to_string()));
                kv.push((format!("{p}.sigma_at_bound"), fit.sigma_at_bound.to_string()));
                kv.push((format!("{p}.alpha_at_bound"), fit.alpha_at_bound.to_string()));
            }
        }
        for (l, wf) in self.weights.iter().enumerate() {
            let p = format!("lead.{}", l + 1);
            for (m, name) in self.model_names.iter().enumerate() {
                kv.push((format!("{p}.weight.{name}"), fmt_f64(wf.weights.as_slice()[m])));
                kv.push((
                    format!("{p}.individual_ignorance.{name}"),
                    fmt_f64(wf.individual_ignorance[m]),
                ));
            }
            let ranking: Vec<String> = wf.ranking.iter().map(|&i| self.model_names[i].clone()).collect();
            kv.push((format!("{p}.ranking"), ranking.join(",")));
            kv.push((format!("{p}.combined_ignorance"), fmt_f64(wf.training_ignorance)));
        }
        render_key_values(
            "fitted forecast-system parameters",
            kv.iter().map(|(k, v)| (k.as_str(), v.clone())),
        )
    }

    /// Parses the output of [`FittedParams::to_key_values`].
    pub fn from_key_values(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let get = |k: &str| -> Result<&String> {
            kv.get(k).ok_or_else(|| Error::Parse(format!("missing key {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse::<f64>().map_err(|e| Error::Parse(format!("{k}: {e}")))
        };
        let int = |k: &str| -> Result<usize> {
            get(k)?.parse::<usize>().map_err(|e| Error::Parse(format!("{k}: {e}")))
        };
        let flag = |k: &str| -> Result<bool> {
            get(k)?.parse::<bool>().map_err(|e| Error::Parse(format!("{k}: {e}")))
        };
        let model_names: Vec<String> = get("models")?.split(',').map(str::to_string).collect();
        let index: BTreeMap<&str, usize> =
            model_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let max_lead = int("max_lead")?;
        let mut kappa = Vec::new();
        let mut per_lead = Vec::new();
        for name in &model_names {
            kappa.push(num(&format!("model.{name}.kappa"))?);
            let mut fits = Vec::new();
            for l in 1..=max_lead {
                let p = format!("model.{name}.lead.{l}");
                fits.push(SigmaAlphaFit {
                    sigma: num(&format!("{p}.sigma"))?,
                    alpha: num(&format!("{p}.alpha"))?,
                    training_ignorance: num(&format!("{p}.training_ignorance"))?,
                    busts: int(&format!("{p}.busts"))?,
                    sigma_at_bound: flag(&format!("{p}.sigma_at_bound"))?,
                    alpha_at_bound: flag(&format!("{p}.alpha_at_bound"))?,
                });
            }
            per_lead.push(fits);
        }
        let mut weights = Vec::new();
        for l in 1..=max_lead {
            let p = format!("lead.{l}");
            let omega = model_names
                .iter()
                .map(|n| num(&format!("{p}.weight.{n}")))
                .collect::<Result<Vec<_>>>()?;
            let individual = model_names
                .iter()
                .map(|n| num(&format!("{p}.individual_ignorance.{n}")))
                .collect::<Result<Vec<_>>>()?;
            let ranking = get(&format!("{p}.ranking"))?
                .split(',')
                .map(|n| {
                    index
                        .get(n)
                        .copied()
                        .ok_or_else(|| Error::Parse(format!("unknown model {n} in ranking")))
                })
                .collect::<Result<Vec<_>>>()?;
            weights.push(WeightFit {
                weights: WeightVector::new(omega)?,
                ranking,
                individual_ignorance: individual,
                training_ignorance: num(&format!("{p}.combined_ignorance"))?,
            });
        }
        Ok(Self {
            model_names,
            kappa,
            per_lead,
            weights,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn climo() -> Climatology {
        let sample = (0..2048).map(|i| (i as f64 * 0.754_877_666).fract() * 3.0).collect();
        Climatology::from_sample(sample).unwrap()
    }

    /// Members scattered around each outcome by a fixed pseudo-random offset.
    fn noisy_pairs(n: usize, members: usize, salt: u64) -> PairSet {
        use rand::Rng;
        let mut rng = seed::rng(salt);
        let outcomes: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..2.5)).collect();
        let m = outcomes
            .iter()
            .flat_map(|&y| (0..members).map(|_| y + rng.random_range(-0.2..0.2)).collect::<Vec<_>>())
            .collect();
        PairSet::with_climatology(members, m, outcomes, &climo()).unwrap()
    }

    #[test]
    fn grid_values_hit_bounds() {
        let g = GridSpec::log(1e-4, 10.0, 33);
        let v = g.values();
        assert_eq!(v.len(), 33);
        assert_eq!(v[0], 1e-4);
        assert_eq!(v[32], 10.0);
        assert!(v.windows(2).all(|w| w[1] > w[0]));
        let a = GridSpec::linear(0.0, 1.0, 21).values();
        assert_eq!(a[0], 0.0);
        assert_eq!(a[20], 1.0);
        assert_eq!(GridSpec::linear(0.3, 0.3, 1).values(), vec![0.3]);
    }

    #[test]
    fn refinement_shrinks_and_clips() {
        let g = GridSpec::linear(0.0, 1.0, 21);
        let mut r = Refiner::new(g, 17);
        let p = r.next_round(1.0);
        assert!(p.iter().all(|&x| (0.95..=1.0).contains(&x)));
        assert_eq!(*p.last().unwrap(), 1.0);
        let q = r.next_round(0.5);
        let width = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - q.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((width - 2.0 * 0.05 * 2.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs() {
        let mut c = FitConfig::default();
        c.sigma_grid.lo = 0.0;
        assert!(c.validate().is_err());
        let mut c = FitConfig::default();
        c.alpha_grid.hi = 1.5;
        assert!(c.validate().is_err());
        assert!(FitConfig::default().validate().is_ok());
    }

    #[test]
    fn identical_pairs_push_to_sharp_model() {
        let c = climo();
        let pairs = PairSet::with_climatology(3, vec![1.2; 30], vec![1.2; 10], &c).unwrap();
        let cfg = FitConfig::default();
        let fit = fit_sigma_alpha(&pairs, &cfg).unwrap();
        assert_eq!(fit.sigma, cfg.sigma_grid.lo);
        assert_eq!(fit.alpha, 1.0);
        assert!(fit.sigma_at_bound && fit.alpha_at_bound);
        let small = pairs.subset(&[0, 1, 2]);
        let loo = fit_loo(&small, &cfg).unwrap();
        assert_eq!((loo.sigma, loo.alpha), (fit.sigma, fit.alpha));
    }

    #[test]
    fn too_few_pairs() {
        let c = climo();
        let pairs = PairSet::with_climatology(1, vec![1.0, 2.0], vec![1.0, 2.0], &c).unwrap();
        assert!(fit_sigma_alpha(&pairs.subset(&[0]), &FitConfig::default()).is_err());
        assert!(fit_loo(&pairs, &FitConfig::default()).is_err());
    }

    #[test]
    fn all_infinite_is_a_fit_error() {
        let pairs = PairSet::new(1, vec![0.0, 0.0], vec![1e6, -1e6], vec![0.0, 0.0]).unwrap();
        assert!(matches!(fit_sigma_alpha(&pairs, &FitConfig::default()), Err(Error::Fit(_))));
    }

    #[test]
    fn single_point_kappa_grid() {
        let mut cfg = FitConfig::default();
        cfg.kappa_grid = GridSpec::log(0.02, 0.02, 1);
        let fit = search_kappa(cfg.kappa_grid, &cfg, |k| Ok((k - 0.5).abs())).unwrap();
        assert_eq!(fit.kappa, 0.02);
    }

    #[test]
    fn kappa_search_finds_interior_minimum() {
        let cfg = FitConfig::default();
        let fit = search_kappa(cfg.kappa_grid, &cfg, |k| Ok((k.ln() - 0.03f64.ln()).powi(2))).unwrap();
        assert!((fit.kappa / 0.03 - 1.0).abs() < 1e-3, "{fit:?}");
        assert!(!fit.at_bound);
    }

    #[test]
    fn identical_models_put_all_weight_on_rank_one() {
        let d = vec![0.3, 0.8, 1.1, 0.05];
        let fit = fit_weights_iterative(&[d.clone(), d.clone()], &FitConfig::default()).unwrap();
        assert_eq!(fit.weights.as_slice(), &[1.0, 0.0]);
        assert_eq!(fit.ranking, vec![0, 1]);
    }

    #[test]
    fn model_with_zero_density_gets_no_weight() {
        let a = vec![0.0, 0.0, 0.0];
        let b = vec![0.4, 0.9, 0.2];
        let fit = fit_weights_iterative(&[a, b], &FitConfig::default()).unwrap();
        assert_eq!(fit.weights.as_slice(), &[0.0, 1.0]);
        assert_eq!(fit.ranking, vec![1, 0]);
    }

    #[test]
    fn complementary_models_share_weight() {
        let a = vec![1.0, 0.01, 1.0, 0.01];
        let b = vec![0.01, 1.0, 0.01, 1.0];
        let fit = fit_weights_iterative(&[a, b], &FitConfig::default()).unwrap();
        let w = fit.weights.as_slice();
        assert!((w[0] - 0.5).abs() < 1e-3, "{w:?}");
        assert!(fit.training_ignorance < fit.individual_ignorance[0]);
    }

    #[test]
    fn held_out_densities_match_refitting_each_fold() {
        let pairs = noisy_pairs(12, 3, 5);
        let cfg = FitConfig::default();
        let cached = held_out_densities(&pairs, &cfg).unwrap();
        for k in 0..pairs.len() {
            let rest: Vec<usize> = (0..pairs.len()).filter(|&i| i != k).collect();
            let fit = fit_sigma_alpha(&pairs.subset(&rest), &cfg).unwrap();
            let direct = pairs.subset(&[k]).blended_at_outcomes(fit.sigma, fit.alpha)[0];
            assert_eq!(cached[k], direct, "fold {k}");
        }
        assert!(held_out_densities(&pairs.subset(&[0, 1]), &cfg).is_err());
    }

    #[test]
    fn weight_input_validation() {
        let cfg = FitConfig::default();
        assert!(fit_weights_iterative(&[], &cfg).is_err());
        let single = fit_weights_iterative(&[vec![0.1]], &cfg).unwrap();
        assert_eq!(single.weights.as_slice(), &[1.0]);
        assert!(fit_weights_iterative(&[vec![0.1], vec![0.1, 0.2]], &cfg).is_err());
        assert!(fit_weights_iterative(&[vec![-0.1], vec![0.2]], &cfg).is_err());
    }

    #[test]
    fn fitted_params_round_trip() {
        let fit = SigmaAlphaFit {
            sigma: 0.031,
            alpha: 0.85,
            training_ignorance: -1.25,
            busts: 0,
            sigma_at_bound: false,
            alpha_at_bound: false,
        };
        let wf = WeightFit {
            weights: WeightVector::new(vec![0.75, 0.25]).unwrap(),
            ranking: vec![1, 0],
            individual_ignorance: vec![-1.0, -1.1],
            training_ignorance: -1.2,
        };
        let params = FittedParams {
            model_names: vec!["I".into(), "II".into()],
            kappa: vec![0.02, 0.03],
            per_lead: vec![vec![fit; 2], vec![fit; 2]],
            weights: vec![wf.clone(), wf],
        };
        let text = params.to_key_values(&FitConfig::default());
        assert!(text.contains("grid.sigma.points = 33"));
        assert_eq!(FittedParams::from_key_values(&text).unwrap(), params);
    }
}
