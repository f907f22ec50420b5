//! Adam optimiser and the mini-batch training loop.
//!
//! One loop serves both the evidential model (objectives `un` and `tun`) and
//! the standard softmax classifier (`standard_ce`). The `λ`/`τ` schedule
//! advances once per epoch; data is reshuffled every epoch from a seed
//! derived from `(seed, epoch)`, so a configuration and a dataset determine
//! the trained parameters bit-for-bit.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backbone::{backward, forward, init_params, logits, DropoutMask, MlpConfig, MlpParams};
use crate::error::{Error, Result};
use crate::head::{opinion_from_features, SubjectiveOpinion};
use crate::losses::{batch_loss, LossKind, ScheduleState};
use crate::matrix::Matrix;
use crate::numerics::{argmax, softmax};
use crate::{derive_seed, math, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Softmax cross-entropy; the standard classifier and the baselines' backbone.
    StandardCe,
    /// Evidential CE plus annealed KL regulariser.
    Un,
    /// `un` plus the annealed temperature CE on belief masses.
    Tun,
}

impl Objective {
    pub fn loss_kind(self) -> LossKind {
        match self {
            Objective::StandardCe => LossKind::SoftmaxCe,
            Objective::Un => LossKind::Un,
            Objective::Tun => LossKind::Tun,
        }
    }

    pub fn is_evidential(self) -> bool {
        !matches!(self, Objective::StandardCe)
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::StandardCe => "standard_ce",
            Objective::Un => "un",
            Objective::Tun => "tun",
        }
    }
}

impl core::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard_ce" => Ok(Objective::StandardCe),
            "un" => Ok(Objective::Un),
            "tun" => Ok(Objective::Tun),
            other => Err(Error::Config(alloc::format!("unknown objective {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub anneal_epochs: usize,
    pub objective: Objective,
    /// Seeds shuffling and dropout masks. Initialisation uses `MlpConfig::seed`.
    pub seed: u64,
    /// Number of parameter snapshots kept from the second half of training.
    pub snapshot_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            batch_size: 64,
            epochs: 100,
            anneal_epochs: 10,
            objective: Objective::Tun,
            seed: 42,
            snapshot_count: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(alloc::format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(alloc::format!("weight decay {} must be non-negative", self.weight_decay)));
        }
        Ok(())
    }
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    first: MlpParams,
    second: MlpParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(cfg: &MlpConfig) -> Result<Self> {
        Ok(Self {
            first: MlpParams::zeros(cfg)?,
            second: MlpParams::zeros(cfg)?,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        })
    }
}

/// One Adam update with weight decay added to the gradient (`g + wd·θ`).
pub fn adam_step(params: &mut MlpParams, grads: &MlpParams, state: &mut OptimizerState, learning_rate: f64, weight_decay: f64) -> Result<()> {
    if grads.layers.len() != params.layers.len()
        || grads.layers.iter().zip(&params.layers).any(|(g, p)| g.weights.shape() != p.weights.shape() || g.bias.len() != p.bias.len())
        || state.first.layers.len() != params.layers.len()
    {
        return Err(Error::Shape("gradient or optimiser state does not mirror the parameters".into()));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let correct1 = 1.0 - libm::pow(b1, f64::from(t));
    let correct2 = 1.0 - libm::pow(b2, f64::from(t));
    let blocks = params
        .blocks_mut()
        .zip(grads.blocks())
        .zip(state.first.blocks_mut().zip(state.second.blocks_mut()));
    for ((p, g), (m, v)) in blocks {
        for i in 0..p.len() {
            let grad = g[i] + weight_decay * p[i];
            m[i] = b1 * m[i] + (1.0 - b1) * grad;
            v[i] = b2 * v[i] + (1.0 - b2) * grad * grad;
            let m_hat = m[i] / correct1;
            let v_hat = v[i] / correct2;
            p[i] -= learning_rate * m_hat / (math::sqrt(v_hat) + state.epsilon);
        }
    }
    Ok(())
}

/// A trained network with the objective it was trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: MlpConfig,
    pub params: MlpParams,
    pub objective: Objective,
    /// Schedule in effect during the final epoch.
    pub schedule: ScheduleState,
    /// Snapshots from the second half of training, oldest first.
    pub snapshots: Vec<MlpParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lambda: f64,
    pub tau: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

/// Output of [`TrainedModel::predict`] for one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Opinion(SubjectiveOpinion),
    Softmax(Vec<f64>),
}

impl Prediction {
    pub fn probs(&self) -> &[f64] {
        match self {
            Prediction::Opinion(o) => &o.probs,
            Prediction::Softmax(p) => p,
        }
    }

    pub fn predicted_class(&self) -> usize {
        match self {
            Prediction::Opinion(o) => o.predicted_class,
            Prediction::Softmax(p) => argmax(p),
        }
    }
}

impl TrainedModel {
    /// An untrained model with freshly initialised parameters.
    pub fn initial(config: MlpConfig, objective: Objective) -> Result<Self> {
        let params = init_params(&config)?;
        Ok(Self { config, params, objective, schedule: ScheduleState::at_epoch(0, 0), snapshots: Vec::new() })
    }

    pub fn classes(&self) -> usize {
        self.config.output_dim
    }

    /// Deterministic inference without dropout.
    pub fn predict(&self, features: &Matrix) -> Result<Vec<Prediction>> {
        let out = logits(&self.params, features)?;
        out.iter_rows()
            .map(|row| {
                if self.objective.is_evidential() {
                    opinion_from_features(row).map(Prediction::Opinion)
                } else {
                    softmax(row).map(Prediction::Softmax)
                }
            })
            .collect()
    }
}

/// Completed-epoch numbers (1-based) after which snapshots are taken:
/// evenly spaced over the second half of training, ending at the last epoch.
pub fn snapshot_epochs(epochs: usize, count: usize) -> Vec<usize> {
    let half = epochs / 2;
    let span = epochs - half;
    let mut out: Vec<usize> = (1..=count).map(|i| half + (i * span) / count).filter(|&e| e > half && e > 0).collect();
    out.dedup();
    out
}

fn accuracy(params: &MlpParams, features: &Matrix, labels: &[usize]) -> Result<f64> {
    let out = logits(params, features)?;
    let correct = out.iter_rows().zip(labels).filter(|(row, &y)| argmax(row) == y).count();
    Ok(correct as f64 / labels.len().max(1) as f64)
}

fn check_labels(features: &Matrix, labels: &[usize], classes: usize, what: &'static str) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Empty(what));
    }
    if features.rows() != labels.len() {
        return Err(Error::DimensionMismatch { expected: features.rows(), found: labels.len() });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::LabelOutOfRange { label: bad, classes });
    }
    if !features.is_finite() {
        return Err(Error::NonFinite(alloc::format!("{what} features")));
    }
    Ok(())
}

/// Trains a model on `(features, labels)`, optionally tracking accuracy on a
/// validation split.
pub fn train(
    features: &Matrix,
    labels: &[usize],
    validation: Option<(&Matrix, &[usize])>,
    mlp: &MlpConfig,
    cfg: &TrainConfig,
) -> Result<(TrainedModel, TrainLog)> {
    cfg.validate()?;
    mlp.validate()?;
    check_labels(features, labels, mlp.output_dim, "training set")?;
    if features.cols() != mlp.input_dim {
        return Err(Error::DimensionMismatch { expected: mlp.input_dim, found: features.cols() });
    }
    if let Some((vx, vy)) = validation {
        check_labels(vx, vy, mlp.output_dim, "validation set")?;
    }

    let mut model = TrainedModel::initial(mlp.clone(), cfg.objective)?;
    let mut opt = OptimizerState::new(mlp)?;
    let mut log = TrainLog::default();
    let kind = cfg.objective.loss_kind();
    let snapshot_at = snapshot_epochs(cfg.epochs, cfg.snapshot_count);
    let mut order: Vec<usize> = (0..labels.len()).collect();

    for epoch in 0..cfg.epochs {
        let schedule = ScheduleState::at_epoch(epoch, cfg.anneal_epochs);
        let mut rng = rng_from_seed(derive_seed(cfg.seed, epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = features.select_rows(chunk);
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mask = if mlp.dropout_rate > 0.0 {
                Some(DropoutMask::sample(mlp, chunk.len(), mlp.dropout_rate, &mut rng)?)
            } else {
                None
            };
            let (out, trace) = forward(&model.params, &batch, mask.as_ref())?;
            let (loss, grad_out) = batch_loss(kind, &out, &batch_labels, &schedule)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            loss_sum += loss * chunk.len() as f64;
            let grads = backward(&trace, &model.params, &grad_out)?;
            adam_step(&mut model.params, &grads, &mut opt, cfg.learning_rate, cfg.weight_decay)?;
        }
        if !model.params.is_finite() {
            return Err(Error::Divergence { epoch, loss: f64::NAN });
        }

        let val_accuracy = match validation {
            Some((vx, vy)) => Some(accuracy(&model.params, vx, vy)?),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            loss: loss_sum / labels.len() as f64,
            lambda: schedule.lambda,
            tau: schedule.tau,
            val_accuracy,
        };
        log::debug!("epoch {} loss {:.6} λ {:.3} τ {:.3}", record.epoch, record.loss, record.lambda, record.tau);
        log.epochs.push(record);
        model.schedule = schedule;
        if snapshot_at.contains(&(epoch + 1)) {
            model.snapshots.push(model.params.clone());
        }
    }
    Ok((model, log))
}

/// Fraction of rows whose predicted class matches the label.
pub fn model_accuracy(model: &TrainedModel, features: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(features, labels, model.classes(), "evaluation set")?;
    accuracy(&model.params, features, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::Activation;
    use alloc::vec;

    fn scalar_params(v: f64) -> (MlpConfig, MlpParams) {
        let cfg = MlpConfig { input_dim: 1, hidden_dims: vec![], output_dim: 1, activation: Activation::Relu, dropout_rate: 0.0, seed: 0 };
        let mut p = MlpParams::zeros(&cfg).unwrap();
        p.layers[0].weights.set(0, 0, v);
        (cfg, p)
    }

    #[test]
    fn adam_with_zero_gradient_is_identity() {
        let (cfg, mut p) = scalar_params(0.7);
        let before = p.clone();
        let mut st = OptimizerState::new(&cfg).unwrap();
        let g = MlpParams::zeros(&cfg).unwrap();
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut st, 1e-3, 0.0).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let (cfg, mut p) = scalar_params(0.0);
        let mut st = OptimizerState::new(&cfg).unwrap();
        let mut g = MlpParams::zeros(&cfg).unwrap();
        g.layers[0].weights.set(0, 0, 1.0);
        adam_step(&mut p, &g, &mut st, 0.1, 0.0).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = -0.1 / (1 + 1e-8)
        assert!((p.layers[0].weights.get(0, 0) + 0.1).abs() < 1e-8);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let (cfg, mut p) = scalar_params(0.0);
        let mut st = OptimizerState::new(&cfg).unwrap();
        let mut g = MlpParams::zeros(&cfg).unwrap();
        g.layers[0].bias[0] = f64::NAN;
        assert!(matches!(adam_step(&mut p, &g, &mut st, 0.1, 0.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn snapshot_schedule() {
        assert_eq!(snapshot_epochs(200, 5), vec![120, 140, 160, 180, 200]);
        assert_eq!(snapshot_epochs(4, 5), vec![3, 4]);
        assert!(snapshot_epochs(0, 5).is_empty());
        assert!(snapshot_epochs(10, 0).is_empty());
    }

    #[test]
    fn objective_names_round_trip() {
        for o in [Objective::StandardCe, Objective::Un, Objective::Tun] {
            assert_eq!(o.name().parse::<Objective>().unwrap(), o);
        }
        assert!("focal".parse::<Objective>().is_err());
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let x = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let mlp = MlpConfig::new(2, 2);
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let (model, log) = train(&x, &[0, 1], None, &mlp, &cfg).unwrap();
        assert!(log.epochs.is_empty());
        assert_eq!(model.params, init_params(&mlp).unwrap());
    }

    #[test]
    fn train_rejects_bad_inputs() {
        let x = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let mlp = MlpConfig::new(2, 2);
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        assert!(matches!(train(&Matrix::zeros(0, 2), &[], None, &mlp, &cfg), Err(Error::Empty(_))));
        assert!(matches!(train(&x, &[0, 2], None, &mlp, &cfg), Err(Error::LabelOutOfRange { .. })));
        let bad = TrainConfig { batch_size: 0, ..cfg.clone() };
        assert!(train(&x, &[0, 1], None, &mlp, &bad).is_err());
    }

    #[test]
    fn zero_network_predicts_maximal_uncertainty() {
        let mlp = MlpConfig::new(2, 4);
        let model = TrainedModel {
            params: MlpParams::zeros(&mlp).unwrap(),
            config: mlp,
            objective: Objective::Tun,
            schedule: ScheduleState::annealed(),
            snapshots: vec![],
        };
        // zero features → evidence ln 2 per class, not zero; zero evidence needs f → -∞
        let preds = model.predict(&Matrix::zeros(1, 2)).unwrap();
        let Prediction::Opinion(o) = &preds[0] else { panic!("expected opinion") };
        let s = 4.0 * (1.0 + core::f64::consts::LN_2);
        assert!((o.uncertainty - 4.0 / s).abs() < 1e-15);
        assert!(o.probs.iter().all(|p| (p - 0.25).abs() < 1e-15));

        // output bias far below zero: evidence underflows to exactly 0, u = 1
        let mut saturated = model.clone();
        saturated.params.layers.last_mut().unwrap().bias = vec![-800.0; 4];
        let preds = saturated.predict(&Matrix::zeros(1, 2)).unwrap();
        let Prediction::Opinion(o) = &preds[0] else { panic!("expected opinion") };
        assert_eq!(o.uncertainty, 1.0);
    }

    #[test]
    fn standard_model_probabilities_sum_to_one() {
        let mlp = MlpConfig::new(3, 5);
        let model = TrainedModel::initial(mlp, Objective::StandardCe).unwrap();
        let x = Matrix::from_rows(&[[0.5, -1.0, 2.0], [3.0, 0.1, -0.2]]).unwrap();
        for p in model.predict(&x).unwrap() {
            assert!(matches!(p, Prediction::Softmax(_)));
            assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
