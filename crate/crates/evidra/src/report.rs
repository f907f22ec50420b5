//! Versioned JSON report shared by every evaluating command.

use std::path::Path;

use evidra_core::calibration::ThresholdCalibration;
use evidra_core::metrics::MetricReport;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

/// Identifies the file a number came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    pub name: String,
    pub rows: usize,
    pub sha256: String,
}

/// Threshold selection, including the full objective curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSummary {
    pub method: String,
    pub dataset: DatasetRef,
    pub theta: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub objective: f64,
    pub candidates: Vec<f64>,
    pub tpr_curve: Vec<f64>,
    pub fpr_curve: Vec<f64>,
    pub objective_curve: Vec<f64>,
}

impl CalibrationSummary {
    pub fn new(method: String, dataset: DatasetRef, cal: &ThresholdCalibration) -> Self {
        Self {
            method,
            dataset,
            theta: cal.theta,
            tpr: cal.tpr_at_theta(),
            fpr: cal.fpr_at_theta(),
            objective: cal.objective_at_theta(),
            candidates: cal.sweep.candidates.clone(),
            tpr_curve: cal.sweep.tpr.clone(),
            fpr_curve: cal.sweep.fpr.clone(),
            objective_curve: cal.objective.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Evaluation {
    pub method: String,
    pub dataset: DatasetRef,
    pub mean_uncertainty: f64,
    /// AUROC of `u` as a detector of wrong predictions.
    pub wrong_prediction_auroc: Option<f64>,
    pub unthresholded: MetricReport,
    pub thresholded: Option<MetricReport>,
}

/// Equal-width histogram of `u` over `[0, 1]`; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn of_unit_interval(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let i = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Self { edges, counts }
    }

    /// One text line per bin with a bar scaled to the largest count.
    pub fn render(&self, width: usize) -> String {
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1);
        let mut out = String::new();
        for (i, &c) in self.counts.iter().enumerate() {
            let bar = "#".repeat(c * width / max);
            out.push_str(&format!("  [{:.2}, {:.2}{} {:>6} {bar}\n", self.edges[i], self.edges[i + 1], if i + 1 == self.counts.len() { "]" } else { ")" }, c));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodResult {
    pub method: String,
    pub dataset: DatasetRef,
    pub theta: f64,
    /// Fraction with `u ≥ θ`.
    pub detection_rate: f64,
    pub mean_uncertainty: f64,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonRow {
    pub method: String,
    pub theta: f64,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub thresholded_macro_f1: Option<f64>,
    pub macro_auc: Option<f64>,
    pub referral_rate: f64,
    /// Mean detection rate over the OOD files, if any were given.
    pub ood_rate: Option<f64>,
    /// Forward passes of the network per scored sample.
    pub forward_passes_per_sample: usize,
    /// Measured only with `--timing`; wall-clock values break byte-for-byte
    /// reproducibility of the report.
    pub seconds_per_sample: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    #[serde(default)]
    pub calibration: Option<CalibrationSummary>,
    #[serde(default)]
    pub evaluations: Vec<Evaluation>,
    #[serde(default)]
    pub ood: Vec<OodResult>,
    #[serde(default)]
    pub comparison: Vec<ComparisonRow>,
}

impl RunReport {
    pub fn new(command: &str) -> Self {
        Self { schema_version: SCHEMA_VERSION, command: command.into(), calibration: None, evaluations: vec![], ood: vec![], comparison: vec![] }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let r: RunReport = serde_json::from_str(text).map_err(|e| CliError::Data(format!("invalid report: {e}")))?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(CliError::Data(format!("unsupported report schema_version {}, expected {SCHEMA_VERSION}", r.schema_version)));
        }
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_json()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }
}
