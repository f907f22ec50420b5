//! Uncertainty scorers: the evidential score and four comparison baselines.
//!
//! Every scorer returns, per sample, a probability vector and an uncertainty
//! in `[0, 1]`, so all of them feed the same calibration and metrics code.
//!
//! - `uios`: `u = K / S` from a single deterministic pass.
//! - `entropy`: predictive entropy of one pass, divided by `ln K`.
//! - `mc_drop`: mean of `T` passes with fresh dropout masks; normalised
//!   entropy of the mean.
//! - `ensemble`: mean over snapshot checkpoints; normalised entropy of the mean.
//! - `tta`: `T` passes over Gaussian-jittered inputs; mean across classes of
//!   the per-class variance of probabilities, divided by its maximum `1/4`.

use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backbone::{forward, logits, DropoutMask, MlpConfig, MlpParams};
use crate::calibration::PredictionRecord;
use crate::error::{Error, Result};
use crate::head::opinion_from_features;
use crate::matrix::Matrix;
use crate::numerics::{entropy, softmax};
use crate::trainer::{Objective, TrainedModel};
use crate::{derive_seed, math, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyMethod {
    Uios,
    Entropy,
    McDrop,
    Ensemble,
    Tta,
}

impl UncertaintyMethod {
    pub const ALL: [UncertaintyMethod; 5] =
        [UncertaintyMethod::Uios, UncertaintyMethod::Entropy, UncertaintyMethod::McDrop, UncertaintyMethod::Ensemble, UncertaintyMethod::Tta];

    pub fn name(self) -> &'static str {
        match self {
            UncertaintyMethod::Uios => "uios",
            UncertaintyMethod::Entropy => "entropy",
            UncertaintyMethod::McDrop => "mc_drop",
            UncertaintyMethod::Ensemble => "ensemble",
            UncertaintyMethod::Tta => "tta",
        }
    }
}

impl core::fmt::Display for UncertaintyMethod {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for UncertaintyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UncertaintyMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(alloc::format!("unknown uncertainty method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoredPrediction {
    pub probs: Vec<f64>,
    pub uncertainty: f64,
}

/// Joins scores with ground-truth labels.
pub fn to_records(scored: &[ScoredPrediction], labels: &[usize]) -> Result<Vec<PredictionRecord>> {
    if scored.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: scored.len(), found: labels.len() });
    }
    Ok(scored.iter().zip(labels).map(|(s, &y)| PredictionRecord::new(s.probs.clone(), s.uncertainty, y)).collect())
}

/// Entropy divided by `ln K`, clamped to `[0, 1]`.
pub fn normalized_entropy(p: &[f64]) -> Result<f64> {
    if p.len() < 2 {
        return Ok(0.0);
    }
    Ok((entropy(p)? / math::ln(p.len() as f64)).clamp(0.0, 1.0))
}

fn row_probs(objective: Objective, row: &[f64]) -> Result<Vec<f64>> {
    if objective.is_evidential() {
        opinion_from_features(row).map(|o| o.probs)
    } else {
        softmax(row)
    }
}

fn probs_matrix(objective: Objective, out: &Matrix) -> Result<Vec<Vec<f64>>> {
    out.iter_rows().map(|row| row_probs(objective, row)).collect()
}

fn mean_rows(passes: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let t = passes.len() as f64;
    let mut mean = passes[0].clone();
    for pass in &passes[1..] {
        for (m, p) in mean.iter_mut().zip(pass) {
            for (a, b) in m.iter_mut().zip(p) {
                *a += b;
            }
        }
    }
    for row in &mut mean {
        for v in row.iter_mut() {
            *v /= t;
        }
    }
    mean
}

fn entropy_scored(mean: Vec<Vec<f64>>) -> Result<Vec<ScoredPrediction>> {
    mean.into_iter()
        .map(|probs| normalized_entropy(&probs).map(|uncertainty| ScoredPrediction { probs, uncertainty }))
        .collect()
}

/// `u = K / S` with `p = α / S`; requires an evidential model.
pub fn uios_predict(model: &TrainedModel, features: &Matrix) -> Result<Vec<ScoredPrediction>> {
    if !model.objective.is_evidential() {
        return Err(Error::Config("the evidential score needs a model trained with `un` or `tun`".into()));
    }
    logits(&model.params, features)?
        .iter_rows()
        .map(|row| opinion_from_features(row).map(|o| ScoredPrediction { probs: o.probs, uncertainty: o.uncertainty }))
        .collect()
}

pub fn entropy_uncertainty(model: &TrainedModel, features: &Matrix) -> Result<Vec<ScoredPrediction>> {
    entropy_scored(probs_matrix(model.objective, &logits(&model.params, features)?)?)
}

/// `passes` stochastic forward passes with dropout active.
///
/// A zero rate makes every pass identical; that case logs a warning and
/// falls back to [`entropy_uncertainty`].
pub fn mc_dropout_predict(model: &TrainedModel, features: &Matrix, passes: usize, rate: f64, seed: u64) -> Result<Vec<ScoredPrediction>> {
    if passes < 2 {
        return Err(Error::Config(alloc::format!("MC-dropout needs at least 2 passes, got {passes}")));
    }
    if rate == 0.0 {
        log::warn!("MC-dropout with rate 0 is deterministic; using single-pass entropy");
        return entropy_uncertainty(model, features);
    }
    let mut all = Vec::with_capacity(passes);
    for t in 0..passes {
        let mut rng = rng_from_seed(derive_seed(seed, t as u64));
        let mask = DropoutMask::sample(&model.config, features.rows(), rate, &mut rng)?;
        let (out, _) = forward(&model.params, features, Some(&mask))?;
        all.push(probs_matrix(model.objective, &out)?);
    }
    entropy_scored(mean_rows(&all))
}

/// Averages the probability outputs of several parameter snapshots.
pub fn snapshot_ensemble_predict(config: &MlpConfig, objective: Objective, checkpoints: &[MlpParams], features: &Matrix) -> Result<Vec<ScoredPrediction>> {
    if checkpoints.len() < 2 {
        return Err(Error::Config(alloc::format!("an ensemble needs at least 2 checkpoints, got {}", checkpoints.len())));
    }
    if let Some(i) = checkpoints.iter().position(|p| !p.matches(config)) {
        return Err(Error::Shape(alloc::format!("checkpoint {i} does not match the network configuration")));
    }
    let all: Vec<Vec<Vec<f64>>> = checkpoints
        .iter()
        .map(|p| probs_matrix(objective, &logits(p, features)?))
        .collect::<Result<_>>()?;
    entropy_scored(mean_rows(&all))
}

/// `passes` forward passes over `features + N(0, σ²)`.
pub fn tta_predict(model: &TrainedModel, features: &Matrix, passes: usize, sigma: f64, seed: u64) -> Result<Vec<ScoredPrediction>> {
    if passes < 2 {
        return Err(Error::Config(alloc::format!("TTA needs at least 2 passes, got {passes}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(alloc::format!("TTA jitter sigma {sigma} must be positive")));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(alloc::format!("jitter distribution: {e}")))?;
    let mut all = Vec::with_capacity(passes);
    for t in 0..passes {
        let mut rng = rng_from_seed(derive_seed(seed, t as u64));
        let mut jittered = features.clone();
        for v in jittered.as_mut_slice() {
            *v += normal.sample(&mut rng);
        }
        all.push(probs_matrix(model.objective, &logits(&model.params, &jittered)?)?);
    }
    let mean = mean_rows(&all);
    let t = passes as f64;
    let scored = mean
        .into_iter()
        .enumerate()
        .map(|(i, probs)| {
            let k = probs.len() as f64;
            let var_sum: f64 = probs
                .iter()
                .enumerate()
                .map(|(c, &m)| all.iter().map(|pass| (pass[i][c] - m) * (pass[i][c] - m)).sum::<f64>() / t)
                .sum();
            let uncertainty = (var_sum / k / 0.25).clamp(0.0, 1.0);
            ScoredPrediction { probs, uncertainty }
        })
        .collect();
    Ok(scored)
}

/// Method plus the parameters the stochastic methods need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyScorer {
    pub method: UncertaintyMethod,
    /// `T` for MC-dropout and TTA.
    pub passes: usize,
    /// Overrides the model's configured dropout rate for MC-dropout.
    pub dropout_rate: Option<f64>,
    pub jitter_sigma: f64,
    pub seed: u64,
}

impl UncertaintyScorer {
    pub fn new(method: UncertaintyMethod) -> Self {
        Self { method, passes: 10, dropout_rate: None, jitter_sigma: 0.3, seed: 42 }
    }

    pub fn score(&self, model: &TrainedModel, features: &Matrix) -> Result<Vec<ScoredPrediction>> {
        match self.method {
            UncertaintyMethod::Uios => uios_predict(model, features),
            UncertaintyMethod::Entropy => entropy_uncertainty(model, features),
            UncertaintyMethod::McDrop => {
                let rate = self.dropout_rate.unwrap_or(model.config.dropout_rate);
                mc_dropout_predict(model, features, self.passes, rate, self.seed)
            }
            UncertaintyMethod::Ensemble => snapshot_ensemble_predict(&model.config, model.objective, &model.snapshots, features),
            UncertaintyMethod::Tta => tta_predict(model, features, self.passes, self.jitter_sigma, self.seed),
        }
    }

    /// Forward passes per sample; the structural inference cost.
    pub fn forward_passes(&self, model: &TrainedModel) -> usize {
        match self.method {
            UncertaintyMethod::Uios | UncertaintyMethod::Entropy => 1,
            UncertaintyMethod::McDrop => {
                if self.dropout_rate.unwrap_or(model.config.dropout_rate) == 0.0 {
                    1
                } else {
                    self.passes
                }
            }
            UncertaintyMethod::Ensemble => model.snapshots.len(),
            UncertaintyMethod::Tta => self.passes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::init_params;
    use crate::losses::ScheduleState;
    use alloc::vec;

    fn model(objective: Objective, dropout: f64, seed: u64) -> TrainedModel {
        let mut cfg = MlpConfig::new(2, 3);
        cfg.hidden_dims = vec![16];
        cfg.dropout_rate = dropout;
        cfg.seed = seed;
        TrainedModel { params: init_params(&cfg).unwrap(), config: cfg, objective, schedule: ScheduleState::annealed(), snapshots: vec![] }
    }

    fn points() -> Matrix {
        Matrix::from_rows(&[[0.5, -1.0], [2.0, 0.3], [-1.5, 1.5], [0.0, 0.0]]).unwrap()
    }

    /// A model whose output ignores the input: all weights zero, fixed bias.
    fn constant_model(bias: [f64; 3]) -> TrainedModel {
        let mut m = model(Objective::StandardCe, 0.0, 1);
        for l in &mut m.params.layers {
            for w in l.weights.as_mut_slice() {
                *w = 0.0;
            }
        }
        m.params.layers.last_mut().unwrap().bias = bias.to_vec();
        m
    }

    #[test]
    fn normalized_entropy_bounds() {
        assert_eq!(normalized_entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((normalized_entropy(&[0.25; 4]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(normalized_entropy(&[0.5, 0.5]).unwrap(), 1.0);
    }

    #[test]
    fn entropy_baseline_extremes() {
        let confident = constant_model([800.0, 0.0, 0.0]);
        let s = entropy_uncertainty(&confident, &points()).unwrap();
        assert!(s.iter().all(|p| p.uncertainty < 1e-12));
        let flat = constant_model([0.0, 0.0, 0.0]);
        let s = entropy_uncertainty(&flat, &points()).unwrap();
        assert!(s.iter().all(|p| (p.uncertainty - 1.0).abs() < 1e-12));
    }

    #[test]
    fn mc_dropout_zero_rate_falls_back_to_entropy() {
        let m = model(Objective::StandardCe, 0.0, 3);
        let a = mc_dropout_predict(&m, &points(), 10, 0.0, 1).unwrap();
        assert_eq!(a, entropy_uncertainty(&m, &points()).unwrap());
        assert!(mc_dropout_predict(&m, &points(), 1, 0.5, 1).is_err());
    }

    #[test]
    fn mc_dropout_is_seeded() {
        let m = model(Objective::StandardCe, 0.3, 3);
        let a = mc_dropout_predict(&m, &points(), 10, 0.3, 9).unwrap();
        assert_eq!(a, mc_dropout_predict(&m, &points(), 10, 0.3, 9).unwrap());
        assert_ne!(a, mc_dropout_predict(&m, &points(), 10, 0.3, 10).unwrap());
        assert!(a.iter().all(|s| (0.0..=1.0).contains(&s.uncertainty)));
    }

    #[test]
    fn ensemble_cases() {
        let m = model(Objective::StandardCe, 0.0, 5);
        let same = vec![m.params.clone(), m.params.clone()];
        let e = snapshot_ensemble_predict(&m.config, m.objective, &same, &points()).unwrap();
        let single = entropy_uncertainty(&m, &points()).unwrap();
        for (a, b) in e.iter().zip(&single) {
            assert!((a.uncertainty - b.uncertainty).abs() < 1e-12);
        }
        let a = constant_model([800.0, -800.0, -800.0]);
        let b = constant_model([-800.0, 800.0, -800.0]);
        let e = snapshot_ensemble_predict(&a.config, a.objective, &[a.params.clone(), b.params.clone()], &points()).unwrap();
        // mean [1/2, 1/2, 0]: entropy ln 2 over ln 3
        assert!((e[0].uncertainty - 2f64.ln() / 3f64.ln()).abs() < 1e-12);
        assert!(snapshot_ensemble_predict(&a.config, a.objective, core::slice::from_ref(&a.params), &points()).is_err());
    }

    #[test]
    fn ensemble_of_two_disagreeing_binary_members_is_maximally_uncertain() {
        let mut cfg = MlpConfig::new(1, 2);
        cfg.hidden_dims = vec![];
        let mut a = MlpParams::zeros(&cfg).unwrap();
        a.layers[0].bias = vec![800.0, -800.0];
        let mut b = a.clone();
        b.layers[0].bias = vec![-800.0, 800.0];
        let e = snapshot_ensemble_predict(&cfg, Objective::StandardCe, &[a, b], &Matrix::zeros(1, 1)).unwrap();
        assert_eq!(e[0].probs, vec![0.5, 0.5]);
        assert_eq!(e[0].uncertainty, 1.0);
    }

    #[test]
    fn tta_cases() {
        let flat = constant_model([1.0, 0.0, -1.0]);
        let s = tta_predict(&flat, &points(), 8, 0.5, 1).unwrap();
        assert!(s.iter().all(|p| p.uncertainty < 1e-20));
        let m = model(Objective::StandardCe, 0.0, 6);
        let wide = tta_predict(&m, &points(), 10, 1.0, 2).unwrap();
        let narrow = tta_predict(&m, &points(), 10, 1e-9, 2).unwrap();
        for (w, n) in wide.iter().zip(&narrow) {
            assert!(n.uncertainty < 1e-12);
            assert!((0.0..=1.0).contains(&w.uncertainty));
        }
        assert!(tta_predict(&m, &points(), 10, 0.0, 2).is_err());
        assert!(tta_predict(&m, &points(), 1, 0.1, 2).is_err());
    }

    #[test]
    fn uios_requires_evidential_model() {
        let m = model(Objective::StandardCe, 0.0, 1);
        assert!(uios_predict(&m, &points()).is_err());
        let m = model(Objective::Tun, 0.0, 1);
        let s = uios_predict(&m, &points()).unwrap();
        assert!(s.iter().all(|p| p.uncertainty > 0.0 && p.uncertainty <= 1.0));
    }

    #[test]
    fn method_names_round_trip() {
        for m in UncertaintyMethod::ALL {
            assert_eq!(m.name().parse::<UncertaintyMethod>().unwrap(), m);
        }
    }
}
