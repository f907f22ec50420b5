//! Uncertainty threshold selection and confidence gating.
//!
//! Validation predictions are labelled wrong (1) or right (0). Every distinct
//! observed uncertainty, plus one sentinel just above the maximum, is a
//! candidate threshold `θ`; a sample is flagged when `u ≥ θ`. For each
//! candidate the true-positive rate (wrong predictions flagged) and
//! false-positive rate (right predictions flagged) are counted, and the
//! threshold maximising `w·TPR − FPR` (default `w = 2`) is selected.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::argmax;

/// One scored prediction: the unit of calibration and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub predicted_class: usize,
    pub true_label: usize,
    pub uncertainty: f64,
    pub probs: Vec<f64>,
}

impl PredictionRecord {
    /// Predicted class is the argmax of `probs` (lowest index on ties).
    pub fn new(probs: Vec<f64>, uncertainty: f64, true_label: usize) -> Self {
        Self { predicted_class: argmax(&probs), true_label, uncertainty, probs }
    }

    pub fn is_correct(&self) -> bool {
        self.predicted_class == self.true_label
    }
}

/// `true` where the prediction is wrong.
pub fn wrong_labels(records: &[PredictionRecord]) -> Vec<bool> {
    records.iter().map(|r| !r.is_correct()).collect()
}

/// TPR and FPR of the "wrong prediction" detector at every candidate threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RocSweep {
    /// Ascending; the last entry is the sentinel above every observed value.
    pub candidates: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
}

pub fn roc_sweep(uncertainty: &[f64], wrong: &[bool]) -> Result<RocSweep> {
    if uncertainty.len() != wrong.len() {
        return Err(Error::DimensionMismatch { expected: uncertainty.len(), found: wrong.len() });
    }
    if let Some(u) = uncertainty.iter().find(|u| !u.is_finite()) {
        return Err(Error::NonFinite(alloc::format!("uncertainty {u}")));
    }
    let positives = wrong.iter().filter(|&&w| w).count();
    let negatives = wrong.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Calibration(alloc::format!(
            "need both wrong and correct predictions, found {positives} wrong and {negatives} correct"
        )));
    }

    let mut order: Vec<usize> = (0..uncertainty.len()).collect();
    order.sort_by(|&a, &b| uncertainty[b].total_cmp(&uncertainty[a]));

    // Walk from the largest u down; each distinct value closes a group.
    let mut candidates = Vec::new();
    let mut tpr = Vec::new();
    let mut fpr = Vec::new();
    let max = uncertainty[order[0]];
    candidates.push(max.next_up());
    tpr.push(0.0);
    fpr.push(0.0);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let value = uncertainty[order[i]];
        while i < order.len() && uncertainty[order[i]] == value {
            if wrong[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        candidates.push(value);
        tpr.push(tp as f64 / positives as f64);
        fpr.push(fp as f64 / negatives as f64);
    }
    candidates.reverse();
    tpr.reverse();
    fpr.reverse();
    Ok(RocSweep { candidates, tpr, fpr })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Prefer the larger threshold, which refers fewer samples.
    #[default]
    LargestTheta,
    SmallestTheta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    /// Weight on TPR in the objective `w·TPR − FPR`.
    pub tpr_weight: f64,
    pub tie_break: TieBreak,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self { tpr_weight: 2.0, tie_break: TieBreak::LargestTheta }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdCalibration {
    pub sweep: RocSweep,
    /// `w·TPR − FPR` per candidate.
    pub objective: Vec<f64>,
    pub config: ThresholdConfig,
    pub theta: f64,
    pub theta_index: usize,
}

impl ThresholdCalibration {
    pub fn tpr_at_theta(&self) -> f64 {
        self.sweep.tpr[self.theta_index]
    }

    pub fn fpr_at_theta(&self) -> f64 {
        self.sweep.fpr[self.theta_index]
    }

    pub fn objective_at_theta(&self) -> f64 {
        self.objective[self.theta_index]
    }
}

pub fn select_threshold(sweep: RocSweep, config: ThresholdConfig) -> ThresholdCalibration {
    let objective: Vec<f64> = sweep.tpr.iter().zip(&sweep.fpr).map(|(t, f)| config.tpr_weight * t - f).collect();
    let mut best = 0;
    for (i, &v) in objective.iter().enumerate().skip(1) {
        let better = match config.tie_break {
            TieBreak::LargestTheta => v >= objective[best],
            TieBreak::SmallestTheta => v > objective[best],
        };
        if better {
            best = i;
        }
    }
    ThresholdCalibration { theta: sweep.candidates[best], theta_index: best, objective, config, sweep }
}

/// Sweep and select in one step.
pub fn calibrate(records: &[PredictionRecord], config: ThresholdConfig) -> Result<ThresholdCalibration> {
    if records.is_empty() {
        return Err(Error::Empty("validation records"));
    }
    let u: Vec<f64> = records.iter().map(|r| r.uncertainty).collect();
    Ok(select_threshold(roc_sweep(&u, &wrong_labels(records))?, config))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    High,
    Low,
}

/// `u < θ` is high confidence; `u ≥ θ` is low confidence and gets referred.
pub fn confidence_of(uncertainty: f64, theta: f64) -> Confidence {
    if uncertainty < theta {
        Confidence::High
    } else {
        Confidence::Low
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::Rng as _;

    fn rec(pred: usize, truth: usize, u: f64) -> PredictionRecord {
        let mut probs = vec![0.1; 3];
        probs[pred] = 0.8;
        PredictionRecord::new(probs, u, truth)
    }

    // Exhaustive oracle: evaluate every candidate by direct counting.
    fn brute_force(u: &[f64], wrong: &[bool], weight: f64) -> (f64, f64) {
        let pos = wrong.iter().filter(|&&w| w).count() as f64;
        let neg = wrong.len() as f64 - pos;
        let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut cands = u.to_vec();
        cands.push(u.iter().copied().fold(f64::NEG_INFINITY, f64::max).next_up());
        for &theta in &cands {
            let tp = u.iter().zip(wrong).filter(|(&x, &w)| x >= theta && w).count() as f64;
            let fp = u.iter().zip(wrong).filter(|(&x, &w)| x >= theta && !w).count() as f64;
            let obj = weight * tp / pos - fp / neg;
            if obj > best.1 || (obj == best.1 && theta > best.0) {
                best = (theta, obj);
            }
        }
        best
    }

    #[test]
    fn wrong_label_examples() {
        assert_eq!(wrong_labels(&[rec(0, 0, 0.1), rec(1, 1, 0.2)]), vec![false, false]);
        assert_eq!(wrong_labels(&[rec(0, 1, 0.1), rec(1, 2, 0.2)]), vec![true, true]);
        assert_eq!(wrong_labels(&[rec(2, 2, 0.1), rec(2, 0, 0.2)]), vec![false, true]);
    }

    #[test]
    fn crafted_four_record_case() {
        let u = [0.1, 0.2, 0.6, 0.8];
        let wrong = [false, false, true, true];
        let sweep = roc_sweep(&u, &wrong).unwrap();
        let at = |theta: f64| sweep.candidates.iter().position(|&c| c == theta).unwrap();
        assert_eq!((sweep.tpr[at(0.6)], sweep.fpr[at(0.6)]), (1.0, 0.0));
        assert_eq!((sweep.tpr[at(0.1)], sweep.fpr[at(0.1)]), (1.0, 1.0));
        let cal = select_threshold(sweep, ThresholdConfig::default());
        assert_eq!(cal.theta, 0.6);
        assert_eq!(cal.objective_at_theta(), 2.0);
    }

    #[test]
    fn inverted_scores_never_beat_chance() {
        let u = [0.9, 0.8, 0.7, 0.2, 0.1];
        let wrong = [false, false, false, true, true];
        let sweep = roc_sweep(&u, &wrong).unwrap();
        for (t, f) in sweep.tpr.iter().zip(&sweep.fpr) {
            assert!(t <= f);
        }
    }

    #[test]
    fn identical_uncertainties_select_the_single_value() {
        let cal = calibrate(&[rec(0, 0, 0.4), rec(0, 1, 0.4), rec(1, 1, 0.4)], ThresholdConfig::default()).unwrap();
        assert_eq!(cal.theta, 0.4);
        assert_eq!(cal.sweep.candidates.len(), 2);
    }

    #[test]
    fn degenerate_labels_are_rejected() {
        assert!(matches!(roc_sweep(&[0.1, 0.2], &[false, false]), Err(Error::Calibration(_))));
        assert!(matches!(roc_sweep(&[0.1, 0.2], &[true, true]), Err(Error::Calibration(_))));
        assert!(matches!(calibrate(&[], ThresholdConfig::default()), Err(Error::Empty(_))));
    }

    #[test]
    fn tie_break_is_configurable() {
        // wrong at u = 0.5 only; θ = 0.5 gives 2 - 0, nothing else ties
        let u = [0.2, 0.5, 0.5];
        let wrong = [false, true, false];
        let sweep = roc_sweep(&u, &wrong).unwrap();
        // θ=0.2 → 2·1 − 1 = 1, θ=0.5 → 2·1 − 0.5 = 1.5
        let cal = select_threshold(sweep.clone(), ThresholdConfig::default());
        assert_eq!(cal.theta, 0.5);
        let lo = select_threshold(sweep, ThresholdConfig { tpr_weight: 0.5, tie_break: TieBreak::SmallestTheta });
        // weight 0.5: θ=0.2 → -0.5, θ=0.5 → 0, sentinel → 0; smallest tie is 0.5
        assert_eq!(lo.theta, 0.5);
    }

    #[test]
    fn confidence_boundaries() {
        assert_eq!(confidence_of(0.3, 0.3), Confidence::Low);
        assert_eq!(confidence_of(0.0, 0.1158), Confidence::High);
        assert_eq!(confidence_of(1.0, 1.0), Confidence::Low);
        assert_eq!(confidence_of(1.0, 0.5), Confidence::Low);
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = crate::rng_from_seed(99);
        for _ in 0..1000 {
            let n = rng.random_range(2..=50);
            let levels = rng.random_range(1..=n);
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
            let mut wrong: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
            wrong[0] = true;
            wrong[1] = false;
            let cal = select_threshold(roc_sweep(&u, &wrong).unwrap(), ThresholdConfig::default());
            let (theta, obj) = brute_force(&u, &wrong, 2.0);
            assert_eq!(cal.theta, theta);
            assert!((cal.objective_at_theta() - obj).abs() < 1e-12);
            for w in cal.sweep.tpr.windows(2).chain(cal.sweep.fpr.windows(2)) {
                assert!(w[1] <= w[0]);
            }
        }
    }

    #[test]
    fn flag_partition_survives_monotone_transforms() {
        let mut rng = crate::rng_from_seed(7);
        for _ in 0..200 {
            let n = rng.random_range(4..=40);
            let u: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let mut wrong: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
            wrong[0] = true;
            wrong[1] = false;
            let mapped: Vec<f64> = u.iter().map(|v| (3.0 * v).exp() + v * v).collect();
            let a = select_threshold(roc_sweep(&u, &wrong).unwrap(), ThresholdConfig::default());
            let b = select_threshold(roc_sweep(&mapped, &wrong).unwrap(), ThresholdConfig::default());
            let flags_a: Vec<_> = u.iter().map(|&x| confidence_of(x, a.theta)).collect();
            let flags_b: Vec<_> = mapped.iter().map(|&x| confidence_of(x, b.theta)).collect();
            assert_eq!(flags_a, flags_b);
        }
    }
}
