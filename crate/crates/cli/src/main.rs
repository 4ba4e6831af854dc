//! `mmforecast`: run the forecasting laboratory's experiments and write
//! figure-ready tables.
//!
//! Exit codes: 0 success, 2 usage error, 3 bad configuration, 4 output could
//! not be written, 5 a computation failed.

mod commands;
mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "mmforecast", version, about = "Multi-model probabilistic forecasting laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Trajectory and noisy observations of the system.
    Simulate,
    /// Lyapunov exponent estimates against lambda.
    Lyapunov,
    /// Model dynamics and 1- and 2-step model errors.
    Modelerr,
    /// Best perturbation scale and Ignorance per model and lead.
    Kappa,
    /// Ignorance against ensemble size.
    Enssize,
    /// Fits on large archives.
    Lap,
    /// Fits on small archives, against the large-archive bands.
    Sap,
    /// Multi-model against the single best model.
    Compare,
    /// Every table above.
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Lyapunov => "lyapunov",
            Command::Modelerr => "modelerr",
            Command::Kappa => "kappa",
            Command::Enssize => "enssize",
            Command::Lap => "lap",
            Command::Sap => "sap",
            Command::Compare => "compare",
            Command::All => "all",
        }
    }
}

/// Settings; each overrides the config file key of the same name (with
/// underscores for dashes).
#[derive(Args)]
struct Settings {
    /// Flat `key=value` config file; `#` starts a comment.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<String>,
    /// Preset sizes: desk or full.
    #[arg(long, global = true)]
    scale: Option<String>,
    /// Worker threads.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,
    #[arg(long, global = true)]
    lambda: Option<String>,
    /// Observation noise SD, or `auto`.
    #[arg(long, global = true)]
    noise_sd: Option<String>,
    #[arg(long, global = true)]
    noise_fraction: Option<String>,
    #[arg(long, global = true)]
    spinup_steps: Option<String>,
    /// Model IV's parameter shift.
    #[arg(long, global = true)]
    delta: Option<String>,
    /// Coefficient cutting: round or truncate.
    #[arg(long, global = true)]
    rounding: Option<String>,
    #[arg(long, global = true)]
    n_archives: Option<String>,
    #[arg(long, global = true)]
    lap_size: Option<String>,
    #[arg(long, global = true)]
    sap_size: Option<String>,
    #[arg(long, global = true)]
    test_size: Option<String>,
    #[arg(long, global = true)]
    n_members: Option<String>,
    #[arg(long, global = true)]
    max_lead: Option<String>,
    #[arg(long, global = true)]
    climatology_size: Option<String>,
    #[arg(long, global = true)]
    kappa_launches: Option<String>,
    /// Comma-separated kappa per model, or `auto` to fit.
    #[arg(long, global = true)]
    kappa: Option<String>,
    #[arg(long, global = true)]
    launch_stride: Option<String>,
    /// Comma-separated ascending ensemble sizes.
    #[arg(long, global = true)]
    ensemble_sizes: Option<String>,
    #[arg(long, global = true)]
    sap_loo_weights: Option<String>,
    /// Steps written by `simulate`.
    #[arg(long, global = true)]
    length: Option<String>,
    #[arg(long, global = true)]
    lyapunov_points: Option<String>,
    #[arg(long, global = true)]
    lyapunov_steps: Option<String>,
    #[arg(long, global = true)]
    lyapunov_check_steps: Option<String>,
    #[arg(long, global = true)]
    error_points: Option<String>,
    #[arg(long, global = true)]
    sigma_lo: Option<String>,
    #[arg(long, global = true)]
    sigma_hi: Option<String>,
    #[arg(long, global = true)]
    sigma_points: Option<String>,
    #[arg(long, global = true)]
    alpha_points: Option<String>,
    #[arg(long, global = true)]
    kappa_lo: Option<String>,
    #[arg(long, global = true)]
    kappa_hi: Option<String>,
    #[arg(long, global = true)]
    kappa_points: Option<String>,
    #[arg(long, global = true)]
    weight_points: Option<String>,
    #[arg(long, global = true)]
    refinement_rounds: Option<String>,
    #[arg(long, global = true)]
    refinement_points: Option<String>,
}

impl Settings {
    fn overrides(&self) -> BTreeMap<String, String> {
        let all = [
            ("seed", &self.seed),
            ("scale", &self.scale),
            ("jobs", &self.jobs),
            ("out", &self.out),
            ("lambda", &self.lambda),
            ("noise_sd", &self.noise_sd),
            ("noise_fraction", &self.noise_fraction),
            ("spinup_steps", &self.spinup_steps),
            ("delta", &self.delta),
            ("rounding", &self.rounding),
            ("n_archives", &self.n_archives),
            ("lap_size", &self.lap_size),
            ("sap_size", &self.sap_size),
            ("test_size", &self.test_size),
            ("n_members", &self.n_members),
            ("max_lead", &self.max_lead),
            ("climatology_size", &self.climatology_size),
            ("kappa_launches", &self.kappa_launches),
            ("kappa", &self.kappa),
            ("launch_stride", &self.launch_stride),
            ("ensemble_sizes", &self.ensemble_sizes),
            ("sap_loo_weights", &self.sap_loo_weights),
            ("length", &self.length),
            ("lyapunov_points", &self.lyapunov_points),
            ("lyapunov_steps", &self.lyapunov_steps),
            ("lyapunov_check_steps", &self.lyapunov_check_steps),
            ("error_points", &self.error_points),
            ("sigma_lo", &self.sigma_lo),
            ("sigma_hi", &self.sigma_hi),
            ("sigma_points", &self.sigma_points),
            ("alpha_points", &self.alpha_points),
            ("kappa_lo", &self.kappa_lo),
            ("kappa_hi", &self.kappa_hi),
            ("kappa_points", &self.kappa_points),
            ("weight_points", &self.weight_points),
            ("refinement_rounds", &self.refinement_rounds),
            ("refinement_points", &self.refinement_points),
        ];
        all.into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }
}

/// A failure and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Write(String),
    Compute(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 3,
            Failure::Write(_) => 4,
            Failure::Compute(_) => 5,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Config(m) => format!("configuration error: {m}"),
            Failure::Write(m) => format!("cannot write output: {m}"),
            Failure::Compute(m) => format!("computation failed: {m}"),
        }
    }
}

fn load(settings: &Settings) -> Result<RunConfig, Failure> {
    let text = match &settings.config {
        Some(path) => Some(
            std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?,
        ),
        None => None,
    };
    RunConfig::resolve(text.as_deref(), &settings.overrides()).map_err(Failure::Config)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = load(&cli.settings).and_then(|cfg| {
        if let Some(n) = cfg.jobs {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Failure::Config(format!("jobs: {e}")))?;
        }
        commands::run(cli.command, &cfg)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("mmforecast: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
