//! Classification and OOD evaluation.
//!
//! Per-class figures are one-vs-rest. Macro averages are unweighted means
//! over classes that occur or are predicted (`TP + FP + FN > 0`). AUC is the
//! Mann–Whitney statistic with midranks for ties, which equals the
//! probability that a random positive outscores a random negative.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::calibration::{wrong_labels, PredictionRecord};
use crate::error::{Error, Result};

/// Counts with rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn is_diagonal(&self) -> bool {
        self.counts.iter().enumerate().all(|(i, row)| row.iter().enumerate().all(|(j, &c)| i == j || c == 0))
    }
}

pub fn confusion(records: &[PredictionRecord], classes: usize) -> Result<ConfusionMatrix> {
    let mut counts = vec![vec![0u64; classes]; classes];
    for r in records {
        for label in [r.true_label, r.predicted_class] {
            if label >= classes {
                return Err(Error::LabelOutOfRange { label, classes });
            }
        }
        counts[r.true_label][r.predicted_class] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: u64,
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    /// Whether the class enters the macro averages.
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerClassReport {
    pub classes: Vec<ClassMetrics>,
    pub macro_precision: Option<f64>,
    pub macro_sensitivity: Option<f64>,
    pub macro_specificity: Option<f64>,
    pub macro_f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> Result<PerClassReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Empty("confusion matrix"));
    }
    let k = cm.classes();
    let classes: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.get(c, c);
            let support: u64 = cm.counts[c].iter().sum();
            let predicted: u64 = (0..k).map(|t| cm.get(t, c)).sum();
            let fn_ = support - tp;
            let fp = predicted - tp;
            let tn = total - tp - fn_ - fp;
            let precision = ratio(tp, tp + fp);
            let sensitivity = ratio(tp, tp + fn_);
            let f1 = if precision + sensitivity > 0.0 { 2.0 * precision * sensitivity / (precision + sensitivity) } else { 0.0 };
            ClassMetrics {
                class: c,
                support,
                precision,
                sensitivity,
                specificity: ratio(tn, tn + fp),
                f1,
                included: tp + fp + fn_ > 0,
            }
        })
        .collect();
    let included = || classes.iter().filter(|m| m.included);
    Ok(PerClassReport {
        macro_precision: mean(included().map(|m| m.precision)),
        macro_sensitivity: mean(included().map(|m| m.sensitivity)),
        macro_specificity: mean(included().map(|m| m.specificity)),
        macro_f1: mean(included().map(|m| m.f1)),
        classes,
    })
}

/// Rank-based AUC of `scores` separating `positive` from the rest.
///
/// `None` when either group is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len(), "scores and labels differ in length");
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the group shares the midrank
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += midrank * order[i..=j].iter().filter(|&&idx| positive[idx]).count() as f64;
        i = j + 1;
    }
    let n_pos_f = n_pos as f64;
    Some((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AucReport {
    /// `None` for classes without positives or without negatives.
    pub per_class: Vec<Option<f64>>,
    pub macro_auc: Option<f64>,
}

/// One-vs-rest AUC per class from `probs[k]`, macro-averaged over eligible classes.
pub fn ovr_auc(records: &[PredictionRecord], classes: usize) -> Result<AucReport> {
    for r in records {
        if r.probs.len() != classes {
            return Err(Error::DimensionMismatch { expected: classes, found: r.probs.len() });
        }
        if r.true_label >= classes {
            return Err(Error::LabelOutOfRange { label: r.true_label, classes });
        }
    }
    let per_class: Vec<Option<f64>> = (0..classes)
        .map(|k| {
            let scores: Vec<f64> = records.iter().map(|r| r.probs[k]).collect();
            let positive: Vec<bool> = records.iter().map(|r| r.true_label == k).collect();
            let auc = binary_auc(&scores, &positive);
            if auc.is_none() {
                log::warn!("class {k} has no positives or no negatives; excluded from macro AUC");
            }
            auc
        })
        .collect();
    let macro_auc = mean(per_class.iter().flatten().copied());
    Ok(AucReport { per_class, macro_auc })
}

/// AUROC of the uncertainty score as a detector of wrong predictions.
pub fn wrong_prediction_auroc(records: &[PredictionRecord]) -> Option<f64> {
    let u: Vec<f64> = records.iter().map(|r| r.uncertainty).collect();
    binary_auc(&u, &wrong_labels(records))
}

/// Fraction of samples flagged (`u ≥ θ`).
pub fn ood_detection_rate(uncertainty: &[f64], theta: f64) -> Result<f64> {
    if uncertainty.is_empty() {
        return Err(Error::Empty("uncertainty scores"));
    }
    Ok(uncertainty.iter().filter(|&&u| u >= theta).count() as f64 / uncertainty.len() as f64)
}

/// Evaluation of a record set, optionally after referring `u ≥ θ` samples.
///
/// Metric fields are `None` when no records remain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub n_total: usize,
    pub n_evaluated: usize,
    pub n_referred: usize,
    pub referral_rate: f64,
    pub theta: Option<f64>,
    pub accuracy: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub per_class: Option<PerClassReport>,
    pub auc: Option<AucReport>,
}

impl MetricReport {
    pub fn macro_f1(&self) -> Option<f64> {
        self.per_class.as_ref().and_then(|p| p.macro_f1)
    }

    pub fn macro_auc(&self) -> Option<f64> {
        self.auc.as_ref().and_then(|a| a.macro_auc)
    }
}

fn build_report(all: &[PredictionRecord], kept: &[PredictionRecord], classes: usize, theta: Option<f64>) -> Result<MetricReport> {
    let cm = confusion(kept, classes)?;
    let n_total = all.len();
    let n_evaluated = kept.len();
    let n_referred = n_total - n_evaluated;
    let (accuracy, per_class, auc) = if n_evaluated == 0 {
        (None, None, None)
    } else {
        let correct = kept.iter().filter(|r| r.is_correct()).count();
        (Some(correct as f64 / n_evaluated as f64), Some(per_class_metrics(&cm)?), Some(ovr_auc(kept, classes)?))
    };
    Ok(MetricReport {
        n_total,
        n_evaluated,
        n_referred,
        referral_rate: if n_total == 0 { 0.0 } else { n_referred as f64 / n_total as f64 },
        theta,
        accuracy,
        confusion: cm,
        per_class,
        auc,
    })
}

/// Evaluation over every record.
pub fn report(records: &[PredictionRecord], classes: usize) -> Result<MetricReport> {
    build_report(records, records, classes, None)
}

/// Records with `u ≥ θ` are referred and left out of every metric.
pub fn thresholded_report(records: &[PredictionRecord], classes: usize, theta: f64) -> Result<MetricReport> {
    let kept: Vec<PredictionRecord> = records.iter().filter(|r| r.uncertainty < theta).cloned().collect();
    build_report(records, &kept, classes, Some(theta))
}
