//! Experiment results and their figure tables.
//!
//! Every table is long-format CSV with a header row. Per-archive rows carry
//! the archive index; summary rows leave it empty.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::sweeps::{EnsembleSizeRow, KappaSweep};
use crate::calibration::FittedParams;
use crate::error::{Error, Result};
use crate::output::fmt_f64;
use crate::seed::stream;
use crate::stats::Summary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArchiveKind {
    /// Large archive, fitted in-sample.
    Lap,
    /// Small archive, fitted by leave-one-out.
    Sap,
}

impl ArchiveKind {
    pub(crate) fn stream(self) -> u64 {
        match self {
            ArchiveKind::Lap => stream::LAP,
            ArchiveKind::Sap => stream::SAP,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ArchiveKind::Lap => "lap",
            ArchiveKind::Sap => "sap",
        }
    }
}

/// One archive's fitted system and its scores on the test archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveResult {
    pub archive_id: usize,
    pub params: FittedParams,
    /// `test_ignorance[model][lead - 1]`
    pub test_ignorance: Vec<Vec<f64>>,
    /// Weighted multi-model test Ignorance per lead.
    pub mm_test_ignorance: Vec<f64>,
    /// Model with the best training Ignorance, per lead.
    pub best_model: Vec<usize>,
    /// That model's test Ignorance, per lead.
    pub best_test_ignorance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: ArchiveKind,
    pub archive_size: usize,
    pub model_names: Vec<String>,
    pub max_lead: usize,
    pub kappa: Vec<f64>,
    pub climatology_test_ignorance: Vec<f64>,
    pub results: Vec<ArchiveResult>,
    /// `(archive index, diagnostic)` of archives that could not be fitted.
    pub failures: Vec<(usize, String)>,
}

impl ExperimentReport {
    pub fn n_models(&self) -> usize {
        self.model_names.len()
    }

    pub fn values<F: Fn(&ArchiveResult) -> f64>(&self, f: F) -> Vec<f64> {
        self.results.iter().map(f).collect()
    }

    pub fn alpha(&self, model: usize, lead: usize) -> Vec<f64> {
        self.values(|r| r.params.per_lead[model][lead - 1].alpha)
    }

    pub fn sigma(&self, model: usize, lead: usize) -> Vec<f64> {
        self.values(|r| r.params.per_lead[model][lead - 1].sigma)
    }

    pub fn test_ignorance(&self, model: usize, lead: usize) -> Vec<f64> {
        self.values(|r| r.test_ignorance[model][lead - 1])
    }

    pub fn weight(&self, model: usize, lead: usize) -> Vec<f64> {
        self.values(|r| r.params.weights[lead - 1].weights.as_slice()[model])
    }

    pub fn mm_test_ignorance(&self, lead: usize) -> Vec<f64> {
        self.values(|r| r.mm_test_ignorance[lead - 1])
    }

    pub fn summary<F: Fn(&ArchiveResult) -> f64>(&self, f: F) -> Option<Summary> {
        Summary::of(&self.values(f))
    }
}

/// Multi-model minus single-best test Ignorance per archive; negative
/// values favour the multi-model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiModelComparison {
    pub max_lead: usize,
    /// Archive indices present in both reports.
    pub archive_ids: Vec<usize>,
    /// `[lead - 1][archive]`: LAP multi-model vs LAP single best.
    pub lap_vs_lap: Vec<Vec<f64>>,
    /// SAP multi-model vs SAP single best.
    pub sap_vs_sap: Vec<Vec<f64>>,
    /// SAP multi-model vs LAP single best of the same archive index.
    pub sap_mm_vs_lap_best: Vec<Vec<f64>>,
}

/// Fraction of entries that are at most zero, i.e. archives where the
/// multi-model is no worse than the single best model.
pub fn fraction_not_worse(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().filter(|&&x| x <= 0.0).count() as f64 / xs.len() as f64
}

impl MultiModelComparison {
    pub fn new(lap: &ExperimentReport, sap: &ExperimentReport) -> Result<Self> {
        if lap.max_lead != sap.max_lead || lap.model_names != sap.model_names {
            return Err(Error::InvalidParameter(
                "LAP and SAP reports use different models or leads".into(),
            ));
        }
        let pairs: Vec<(&ArchiveResult, &ArchiveResult)> = lap
            .results
            .iter()
            .filter_map(|l| {
                sap.results
                    .iter()
                    .find(|s| s.archive_id == l.archive_id)
                    .map(|s| (l, s))
            })
            .collect();
        let per_lead = |f: &dyn Fn(&ArchiveResult, &ArchiveResult, usize) -> f64| -> Vec<Vec<f64>> {
            (0..lap.max_lead)
                .map(|i| pairs.iter().map(|(l, s)| f(l, s, i)).collect())
                .collect()
        };
        Ok(Self {
            max_lead: lap.max_lead,
            archive_ids: pairs.iter().map(|(l, _)| l.archive_id).collect(),
            lap_vs_lap: per_lead(&|l, _, i| l.mm_test_ignorance[i] - l.best_test_ignorance[i]),
            sap_vs_sap: per_lead(&|_, s, i| s.mm_test_ignorance[i] - s.best_test_ignorance[i]),
            sap_mm_vs_lap_best: per_lead(&|l, s, i| s.mm_test_ignorance[i] - l.best_test_ignorance[i]),
        })
    }

    pub fn pairings(&self) -> [(&'static str, &Vec<Vec<f64>>); 3] {
        [
            ("lap_vs_lap", &self.lap_vs_lap),
            ("sap_vs_sap", &self.sap_vs_sap),
            ("sap_mm_vs_lap_best", &self.sap_mm_vs_lap_best),
        ]
    }
}

struct Table<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> Table<W> {
    fn new(writer: W, header: &[&str]) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(writer);
        inner.write_record(header)?;
        Ok(Self { inner })
    }

    fn row(&mut self, fields: &[&str]) -> Result<()> {
        self.inner.write_record(fields)?;
        Ok(())
    }

    /// `model, lead, statistic, value, archive_id`
    fn long(&mut self, model: &str, lead: usize, statistic: &str, value: f64, archive: Option<usize>) -> Result<()> {
        let id = archive.map(|a| a.to_string()).unwrap_or_default();
        self.row(&[model, &lead.to_string(), statistic, &fmt_f64(value), &id])
    }

    fn summary(&mut self, model: &str, lead: usize, prefix: &str, xs: &[f64]) -> Result<()> {
        if let Some(s) = Summary::of(xs) {
            for (name, v) in s.fields() {
                self.long(model, lead, &format!("{prefix}_{name}"), v, None)?;
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

const LONG_HEADER: [&str; 5] = ["model", "lead", "statistic", "value", "archive_id"];

fn per_archive<W: Write>(t: &mut Table<W>, r: &ExperimentReport, model: &str, lead: usize, stat: &str, xs: &[f64]) -> Result<()> {
    for (res, &x) in r.results.iter().zip(xs) {
        t.long(model, lead, stat, x, Some(res.archive_id))?;
    }
    Ok(())
}

fn climatology_rows<W: Write>(t: &mut Table<W>, climo: &[f64]) -> Result<()> {
    for (i, &v) in climo.iter().enumerate() {
        t.long("climatology", i + 1, "ignorance", v, None)?;
    }
    Ok(())
}

/// Best kappa per model and lead, the Ignorance it achieves, and the
/// Ignorance at every kappa evaluated during the search, climatology, and
/// the noise level. The `kappa` column gives the kappa of each row.
pub fn write_fig6<W: Write>(writer: W, sweep: &KappaSweep) -> Result<()> {
    let mut t = Table::new(writer, &["model", "lead", "statistic", "value", "kappa"])?;
    for row in &sweep.rows {
        let model = &sweep.model_names[row.model];
        let lead = row.lead.to_string();
        let k = fmt_f64(row.kappa);
        t.row(&[model, &lead, "best_kappa", &k, &k])?;
        t.row(&[model, &lead, "ignorance", &fmt_f64(row.ignorance), &k])?;
        t.row(&[model, &lead, "at_bound", if row.at_bound { "1" } else { "0" }, &k])?;
    }
    for &(m, lead, kappa, ign) in &sweep.curve {
        t.row(&[&sweep.model_names[m], &lead.to_string(), "evaluated_ignorance", &fmt_f64(ign), &fmt_f64(kappa)])?;
    }
    for (i, &v) in sweep.climatology.iter().enumerate() {
        t.row(&["climatology", &(i + 1).to_string(), "ignorance", &fmt_f64(v), ""])?;
    }
    t.row(&["noise", "", "sd", &fmt_f64(sweep.noise_sd), ""])?;
    t.finish()
}

/// Test Ignorance and fitted `(sigma, alpha)` against ensemble size.
pub fn write_fig7<W: Write>(writer: W, names: &[String], rows: &[EnsembleSizeRow], climatology: &[f64]) -> Result<()> {
    let mut t = Table::new(writer, &["model", "lead", "ensemble_size", "statistic", "value"])?;
    for r in rows {
        let (lead, size) = (r.lead.to_string(), r.size.to_string());
        for (stat, v) in [("ignorance", r.ignorance), ("sigma", r.sigma), ("alpha", r.alpha)] {
            t.row(&[&names[r.model], &lead, &size, stat, &fmt_f64(v)])?;
        }
    }
    for (i, &v) in climatology.iter().enumerate() {
        t.row(&["climatology", &(i + 1).to_string(), "", "ignorance", &fmt_f64(v)])?;
    }
    t.finish()
}

/// LAP fits: per-archive sigma, alpha, weight and test Ignorance per model
/// and lead, the multi-model test Ignorance, and percentile summaries.
pub fn write_fig8<W: Write>(writer: W, lap: &ExperimentReport) -> Result<()> {
    let mut t = Table::new(writer, &LONG_HEADER)?;
    for lead in 1..=lap.max_lead {
        for (m, name) in lap.model_names.iter().enumerate() {
            for (stat, xs) in [
                ("sigma", lap.sigma(m, lead)),
                ("alpha", lap.alpha(m, lead)),
                ("weight", lap.weight(m, lead)),
                ("ignorance", lap.test_ignorance(m, lead)),
            ] {
                per_archive(&mut t, lap, name, lead, stat, &xs)?;
                t.summary(name, lead, stat, &xs)?;
            }
        }
        let mm = lap.mm_test_ignorance(lead);
        per_archive(&mut t, lap, "multimodel", lead, "ignorance", &mm)?;
        t.summary("multimodel", lead, "ignorance", &mm)?;
    }
    climatology_rows(&mut t, &lap.climatology_test_ignorance)?;
    t.finish()
}

/// One SAP statistic per archive, its SAP summary, and the LAP percentile
/// band (`lap_*` rows) it is compared against.
fn write_sap_statistic<W: Write>(
    t: &mut Table<W>,
    sap: &ExperimentReport,
    lap: &ExperimentReport,
    stat: &str,
    get: impl Fn(&ExperimentReport, usize, usize) -> Vec<f64>,
) -> Result<()> {
    for lead in 1..=sap.max_lead {
        for (m, name) in sap.model_names.iter().enumerate() {
            let xs = get(sap, m, lead);
            per_archive(t, sap, name, lead, stat, &xs)?;
            t.summary(name, lead, stat, &xs)?;
            t.summary(name, lead, &format!("lap_{stat}"), &get(lap, m, lead))?;
        }
    }
    Ok(())
}

pub fn write_fig9<W: Write>(writer: W, sap: &ExperimentReport, lap: &ExperimentReport) -> Result<()> {
    let mut t = Table::new(writer, &LONG_HEADER)?;
    write_sap_statistic(&mut t, sap, lap, "alpha", |r, m, l| r.alpha(m, l))?;
    t.finish()
}

pub fn write_fig10<W: Write>(writer: W, sap: &ExperimentReport, lap: &ExperimentReport) -> Result<()> {
    let mut t = Table::new(writer, &LONG_HEADER)?;
    write_sap_statistic(&mut t, sap, lap, "sigma", |r, m, l| r.sigma(m, l))?;
    t.finish()
}

/// SAP test Ignorance and weights against LAP bands, plus multi-model and
/// climatology Ignorance.
pub fn write_fig11<W: Write>(writer: W, sap: &ExperimentReport, lap: &ExperimentReport) -> Result<()> {
    let mut t = Table::new(writer, &LONG_HEADER)?;
    write_sap_statistic(&mut t, sap, lap, "ignorance", |r, m, l| r.test_ignorance(m, l))?;
    write_sap_statistic(&mut t, sap, lap, "weight", |r, m, l| r.weight(m, l))?;
    for lead in 1..=sap.max_lead {
        let mm = sap.mm_test_ignorance(lead);
        per_archive(&mut t, sap, "multimodel", lead, "ignorance", &mm)?;
        t.summary("multimodel", lead, "ignorance", &mm)?;
        t.summary("multimodel", lead, "lap_ignorance", &lap.mm_test_ignorance(lead))?;
    }
    climatology_rows(&mut t, &sap.climatology_test_ignorance)?;
    t.finish()
}

/// Relative Ignorance per archive under the three pairings (in the model
/// column), with the fraction of archives where the multi-model wins.
pub fn write_fig12<W: Write>(writer: W, cmp: &MultiModelComparison) -> Result<()> {
    let mut t = Table::new(writer, &LONG_HEADER)?;
    for (name, data) in cmp.pairings() {
        for (i, xs) in data.iter().enumerate() {
            let lead = i + 1;
            for (&id, &x) in cmp.archive_ids.iter().zip(xs) {
                t.long(name, lead, "relative_ignorance", x, Some(id))?;
            }
            t.long(name, lead, "fraction_multimodel_not_worse", fraction_not_worse(xs), None)?;
            t.summary(name, lead, "relative_ignorance", xs)?;
        }
    }
    t.finish()
}
