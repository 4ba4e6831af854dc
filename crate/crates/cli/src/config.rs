//! Run configuration: scale preset, then config file, then flags.
//!
//! The config file and the flags share one vocabulary of `key=value`
//! settings, applied in that order so later layers win.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use mmforecast::experiment::ExperimentConfig;
use mmforecast::output::parse_key_values;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Full,
}

impl FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            other => Err(format!("unknown scale {other:?} (expected desk or full)")),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Desk => "desk",
            Scale::Full => "full",
        })
    }
}

/// Every setting a run depends on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub scale: Scale,
    pub experiment: ExperimentConfig,
    /// Steps written by `simulate`.
    pub length: usize,
    /// Lambda values per panel of the Lyapunov sweep.
    pub lyapunov_points: usize,
    /// Steps per Lyapunov estimate in the sweep.
    pub lyapunov_steps: usize,
    /// Steps for the single reported Lyapunov estimate.
    pub lyapunov_check_steps: usize,
    /// Initial conditions per model-error histogram.
    pub error_points: usize,
    /// Output directory; not part of the run's identity.
    #[serde(skip)]
    pub out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[serde(skip)]
    pub jobs: Option<usize>,
}

/// Keys accepted in config files and their flag equivalents.
pub const KEYS: &[&str] = &[
    "scale",
    "seed",
    "out",
    "jobs",
    "lambda",
    "noise_sd",
    "noise_fraction",
    "spinup_steps",
    "delta",
    "rounding",
    "n_archives",
    "lap_size",
    "sap_size",
    "test_size",
    "n_members",
    "max_lead",
    "climatology_size",
    "kappa_launches",
    "kappa",
    "launch_stride",
    "ensemble_sizes",
    "sap_loo_weights",
    "length",
    "lyapunov_points",
    "lyapunov_steps",
    "lyapunov_check_steps",
    "error_points",
    "sigma_lo",
    "sigma_hi",
    "sigma_points",
    "alpha_points",
    "kappa_lo",
    "kappa_hi",
    "kappa_points",
    "weight_points",
    "refinement_rounds",
    "refinement_points",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| format!("{key}: cannot parse {value:?}: {e}"))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    value.split(',').map(|v| parse(key, v)).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("{key}: expected true or false, got {other:?}")),
    }
}

impl RunConfig {
    pub fn preset(scale: Scale) -> Self {
        let (experiment, lyapunov_points) = match scale {
            Scale::Desk => (ExperimentConfig::desk(), 512),
            Scale::Full => (ExperimentConfig::full(), 4096),
        };
        Self {
            scale,
            experiment,
            length: 2048,
            lyapunov_points,
            lyapunov_steps: 10_000,
            lyapunov_check_steps: 1_000_000,
            error_points: 2048,
            out: PathBuf::from("out"),
            jobs: None,
        }
    }

    /// Resolves `flags` over `file` (contents of a config file) over the
    /// preset for the chosen scale.
    pub fn resolve(file: Option<&str>, flags: &BTreeMap<String, String>) -> Result<Self, String> {
        let file = match file {
            Some(text) => parse_key_values(text).map_err(|e| e.to_string())?,
            None => BTreeMap::new(),
        };
        for key in file.keys() {
            if !KEYS.contains(&key.as_str()) {
                return Err(format!("unknown config key {key:?}"));
            }
        }
        let scale = match flags.get("scale").or_else(|| file.get("scale")) {
            Some(s) => s.parse()?,
            None => Scale::Desk,
        };
        let mut cfg = Self::preset(scale);
        for layer in [&file, flags] {
            for (k, v) in layer {
                cfg.apply(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        let e = &mut self.experiment;
        let fit = &mut e.fit;
        match key {
            "scale" => {}
            "seed" => e.seed = parse(key, value)?,
            "out" => self.out = PathBuf::from(value.trim()),
            "jobs" => self.jobs = Some(parse(key, value)?),
            "lambda" => e.lambda = parse(key, value)?,
            "noise_sd" => {
                e.noise_sd = match value.trim() {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "noise_fraction" => e.noise_fraction = parse(key, value)?,
            "spinup_steps" => e.spinup_steps = parse(key, value)?,
            "delta" => e.delta = parse(key, value)?,
            "rounding" => e.rounding = parse(key, value)?,
            "n_archives" => e.n_archives = parse(key, value)?,
            "lap_size" => e.lap_size = parse(key, value)?,
            "sap_size" => e.sap_size = parse(key, value)?,
            "test_size" => e.test_size = parse(key, value)?,
            "n_members" => e.n_members = parse(key, value)?,
            "max_lead" => e.max_lead = parse(key, value)?,
            "climatology_size" => e.climatology_size = parse(key, value)?,
            "kappa_launches" => e.kappa_launches = parse(key, value)?,
            "kappa" => {
                e.kappa = match value.trim() {
                    "auto" => None,
                    v => Some(parse_list(key, v)?),
                }
            }
            "launch_stride" => {
                e.launch_stride = match value.trim() {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "ensemble_sizes" => e.ensemble_sizes = parse_list(key, value)?,
            "sap_loo_weights" => e.sap_loo_weights = parse_bool(key, value)?,
            "length" => self.length = parse(key, value)?,
            "lyapunov_points" => self.lyapunov_points = parse(key, value)?,
            "lyapunov_steps" => self.lyapunov_steps = parse(key, value)?,
            "lyapunov_check_steps" => self.lyapunov_check_steps = parse(key, value)?,
            "error_points" => self.error_points = parse(key, value)?,
            "sigma_lo" => fit.sigma_grid.lo = parse(key, value)?,
            "sigma_hi" => fit.sigma_grid.hi = parse(key, value)?,
            "sigma_points" => fit.sigma_grid.points = parse(key, value)?,
            "alpha_points" => fit.alpha_grid.points = parse(key, value)?,
            "kappa_lo" => fit.kappa_grid.lo = parse(key, value)?,
            "kappa_hi" => fit.kappa_grid.hi = parse(key, value)?,
            "kappa_points" => fit.kappa_grid.points = parse(key, value)?,
            "weight_points" => fit.weight_grid.points = parse(key, value)?,
            "refinement_rounds" => fit.refinement_rounds = parse(key, value)?,
            "refinement_points" => fit.refinement_points = parse(key, value)?,
            other => return Err(format!("unknown setting {other:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        let counts = [
            ("length", self.length),
            ("lyapunov_points", self.lyapunov_points),
            ("lyapunov_steps", self.lyapunov_steps),
            ("lyapunov_check_steps", self.lyapunov_check_steps),
            ("error_points", self.error_points),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(format!("{name} must be at least 1"));
        }
        if self.jobs == Some(0) {
            return Err("jobs must be at least 1".into());
        }
        self.experiment.validate().map_err(|e| e.to_string())
    }
}
