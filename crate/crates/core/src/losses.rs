//! Training objectives and their closed-form gradients.
//!
//! Per-sample losses over Dirichlet concentrations `α` (with `S = Σα`) and a
//! true class `c`:
//!
//! | loss | value | `∂/∂α_j` |
//! |------|-------|----------|
//! | Dirichlet CE | `-ln(α_c / S)` | `1/S - [j=c]/α_c` |
//! | evidential CE | `ψ(S) - ψ(α_c)` | `ψ'(S) - [j=c] ψ'(α_c)` |
//! | KL to uniform | `KL(Dir(α̂) ‖ Dir(1))` | `[j≠c] ((α̂_j-1) ψ'(α̂_j) - (Ŝ-K) ψ'(Ŝ))` |
//! | temperature CE | `-ln(b_c / τ)` | `1/S - [j=c]/(α_c - 1)` |
//!
//! where `α̂` is `α` with the true class reset to 1. The combined objective
//! is `evidential CE + λ·KL` and the full objective adds the temperature CE.
//! Feature-space gradients follow from `∂α_k/∂f_k = sigmoid(f_k)`.
//!
//! Batch losses are arithmetic means over samples.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{dirichlet_from_evidence, evidence_from_features, opinion_from_alpha, DirichletParams, SubjectiveOpinion};
use crate::math;
use crate::matrix::Matrix;
use crate::numerics::{digamma, log_gamma, sigmoid, softmax, trigamma};

const PROB_FLOOR: f64 = 1e-12;

/// One-hot target, stored as the class index and the class count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHotLabel {
    class: usize,
    classes: usize,
}

impl OneHotLabel {
    pub fn new(class: usize, classes: usize) -> Result<Self> {
        if class >= classes {
            return Err(Error::LabelOutOfRange { label: class, classes });
        }
        Ok(Self { class, classes })
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.classes];
        y[self.class] = 1.0;
        y
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.classes {
            return Err(Error::DimensionMismatch { expected: self.classes, found: len });
        }
        Ok(())
    }
}

/// Annealing state for the KL weight `λ` and the temperature `τ`.
///
/// Both ramp linearly over `anneal_epochs`: `λ` from 0 to 1 and `τ` from
/// 0.01 to 1, then stay clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleState {
    pub lambda: f64,
    pub tau: f64,
    pub epoch: usize,
    pub anneal_epochs: usize,
}

impl ScheduleState {
    pub const TAU_START: f64 = 0.01;

    pub fn at_epoch(epoch: usize, anneal_epochs: usize) -> Self {
        let progress = if anneal_epochs == 0 { 1.0 } else { (epoch as f64 / anneal_epochs as f64).min(1.0) };
        Self {
            lambda: progress,
            tau: Self::TAU_START + (1.0 - Self::TAU_START) * progress,
            epoch,
            anneal_epochs,
        }
    }

    /// Fully annealed state (`λ = 1`, `τ = 1`).
    pub fn annealed() -> Self {
        Self::at_epoch(0, 0)
    }
}

/// `-ln p_c` with `p` clamped to `[1e-12, 1]`.
pub fn ce_loss(p: &[f64], y: &OneHotLabel) -> Result<f64> {
    y.check_len(p.len())?;
    crate::numerics::check_distribution(p, 1e-6)?;
    Ok(-math::ln(p[y.class].clamp(PROB_FLOOR, 1.0)))
}

/// Expected cross-entropy under `Dir(α)`: `ψ(S) - ψ(α_c)`.
pub fn unce_loss(alpha: &DirichletParams, y: &OneHotLabel) -> Result<f64> {
    y.check_len(alpha.classes())?;
    alpha.require_evidential()?;
    Ok(digamma(alpha.strength())? - digamma(alpha.alpha()[y.class])?)
}

/// `α̂ = y + (1 - y) ⊙ α`: the true class concentration reset to 1.
pub fn adjusted_alpha(alpha: &DirichletParams, y: &OneHotLabel) -> Result<DirichletParams> {
    y.check_len(alpha.classes())?;
    let mut a = alpha.alpha().to_vec();
    a[y.class] = 1.0;
    DirichletParams::new(a)
}

/// `KL(Dir(α̂) ‖ Dir(1, …, 1))`.
pub fn kl_loss(alpha_hat: &DirichletParams) -> Result<f64> {
    alpha_hat.require_evidential()?;
    let k = alpha_hat.classes() as f64;
    let s = alpha_hat.strength();
    let psi_s = digamma(s)?;
    let mut acc = log_gamma(s)? - log_gamma(k)?;
    for &a in alpha_hat.alpha() {
        acc += (a - 1.0) * (digamma(a)? - psi_s) - log_gamma(a)?;
    }
    // exact zero at the uniform Dirichlet; rounding can leave -1e-16 elsewhere
    Ok(acc.max(0.0))
}

/// `unce + λ · KL(α̂)`.
pub fn un_loss(alpha: &DirichletParams, y: &OneHotLabel, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(alloc::format!("lambda {lambda} outside [0, 1]")));
    }
    let base = unce_loss(alpha, y)?;
    if lambda == 0.0 {
        return Ok(base);
    }
    Ok(base + lambda * kl_loss(&adjusted_alpha(alpha, y)?)?)
}

/// `-ln(b_c / τ)` with `b_c` clamped to at least 1e-12. Negative once `b_c > τ`.
pub fn tce_loss(opinion: &SubjectiveOpinion, y: &OneHotLabel, tau: f64) -> Result<f64> {
    y.check_len(opinion.beliefs.len())?;
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Config(alloc::format!("temperature {tau} outside (0, 1]")));
    }
    Ok(-math::ln(opinion.beliefs[y.class].max(PROB_FLOOR) / tau))
}

/// `un_loss(α, y, λ) + tce_loss(opinion, y, τ)` at the schedule's `λ`, `τ`.
pub fn tun_loss(alpha: &DirichletParams, opinion: &SubjectiveOpinion, y: &OneHotLabel, schedule: &ScheduleState) -> Result<f64> {
    Ok(un_loss(alpha, y, schedule.lambda)? + tce_loss(opinion, y, schedule.tau)?)
}

/// Selects a loss for [`loss_value`], [`loss_grad_alpha`] and [`batch_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Cross-entropy on `softmax(features)`; the standard classifier.
    SoftmaxCe,
    /// Cross-entropy on the Dirichlet mean `α / S`.
    DirichletCe,
    Unce,
    Kl,
    Un,
    Tce,
    Tun,
}

impl LossKind {
    fn is_evidential(self) -> bool {
        !matches!(self, LossKind::SoftmaxCe)
    }
}

/// Value of an evidential loss at `α` (not defined for [`LossKind::SoftmaxCe`]).
pub fn loss_value(kind: LossKind, alpha: &DirichletParams, y: &OneHotLabel, schedule: &ScheduleState) -> Result<f64> {
    match kind {
        LossKind::SoftmaxCe => Err(Error::Config("softmax cross-entropy is defined on logits, not α".into())),
        LossKind::DirichletCe => {
            let s = alpha.strength();
            let p: Vec<f64> = alpha.alpha().iter().map(|a| a / s).collect();
            ce_loss(&p, y)
        }
        LossKind::Unce => unce_loss(alpha, y),
        LossKind::Kl => kl_loss(&adjusted_alpha(alpha, y)?),
        LossKind::Un => un_loss(alpha, y, schedule.lambda),
        LossKind::Tce => tce_loss(&opinion_from_alpha(alpha), y, schedule.tau),
        LossKind::Tun => tun_loss(alpha, &opinion_from_alpha(alpha), y, schedule),
    }
}

/// Closed-form gradient of an evidential loss with respect to `α`.
pub fn loss_grad_alpha(kind: LossKind, alpha: &DirichletParams, y: &OneHotLabel, schedule: &ScheduleState) -> Result<Vec<f64>> {
    y.check_len(alpha.classes())?;
    let a = alpha.alpha();
    let s = alpha.strength();
    let c = y.class;
    let k = a.len();
    match kind {
        LossKind::SoftmaxCe => Err(Error::Config("softmax cross-entropy is defined on logits, not α".into())),
        LossKind::DirichletCe => {
            let mut g = vec![1.0 / s; k];
            if a[c] / s > PROB_FLOOR {
                g[c] -= 1.0 / a[c];
            } else {
                g = vec![0.0; k];
            }
            Ok(g)
        }
        LossKind::Unce => {
            alpha.require_evidential()?;
            let mut g = vec![trigamma(s)?; k];
            g[c] -= trigamma(a[c])?;
            Ok(g)
        }
        LossKind::Kl => {
            let hat = adjusted_alpha(alpha, y)?;
            hat.require_evidential()?;
            let ah = hat.alpha();
            let sh = hat.strength();
            let shared = (sh - k as f64) * trigamma(sh)?;
            let mut g = Vec::with_capacity(k);
            for (j, &v) in ah.iter().enumerate() {
                g.push(if j == c { 0.0 } else { (v - 1.0) * trigamma(v)? - shared });
            }
            Ok(g)
        }
        LossKind::Un => {
            let mut g = loss_grad_alpha(LossKind::Unce, alpha, y, schedule)?;
            if schedule.lambda != 0.0 {
                let kl = loss_grad_alpha(LossKind::Kl, alpha, y, schedule)?;
                for (gi, ki) in g.iter_mut().zip(kl) {
                    *gi += schedule.lambda * ki;
                }
            }
            Ok(g)
        }
        LossKind::Tce => {
            if !(schedule.tau > 0.0 && schedule.tau <= 1.0) {
                return Err(Error::Config(alloc::format!("temperature {} outside (0, 1]", schedule.tau)));
            }
            let evidence = a[c] - 1.0;
            if evidence / s < PROB_FLOOR {
                return Ok(vec![0.0; k]);
            }
            let mut g = vec![1.0 / s; k];
            g[c] -= 1.0 / evidence;
            Ok(g)
        }
        LossKind::Tun => {
            let mut g = loss_grad_alpha(LossKind::Un, alpha, y, schedule)?;
            for (gi, ti) in g.iter_mut().zip(loss_grad_alpha(LossKind::Tce, alpha, y, schedule)?) {
                *gi += ti;
            }
            Ok(g)
        }
    }
}

/// Loss of one feature vector and its gradient with respect to the features.
pub fn feature_loss_and_grad(kind: LossKind, features: &[f64], y: &OneHotLabel, schedule: &ScheduleState) -> Result<(f64, Vec<f64>)> {
    y.check_len(features.len())?;
    if !kind.is_evidential() {
        let p = softmax(features)?;
        let loss = -math::ln(p[y.class].max(PROB_FLOOR));
        let mut g = p;
        g[y.class] -= 1.0;
        return Ok((loss, g));
    }
    let alpha = dirichlet_from_evidence(&evidence_from_features(features)?);
    let loss = loss_value(kind, &alpha, y, schedule)?;
    let mut g = loss_grad_alpha(kind, &alpha, y, schedule)?;
    for (gi, &f) in g.iter_mut().zip(features) {
        *gi *= sigmoid(f);
    }
    Ok((loss, g))
}

/// Mean loss over a batch of network outputs and its gradient with respect to them.
pub fn batch_loss(kind: LossKind, outputs: &Matrix, labels: &[usize], schedule: &ScheduleState) -> Result<(f64, Matrix)> {
    if outputs.rows() != labels.len() {
        return Err(Error::DimensionMismatch { expected: outputs.rows(), found: labels.len() });
    }
    if labels.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let k = outputs.cols();
    let n = labels.len() as f64;
    let mut grad = Matrix::zeros(outputs.rows(), k);
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let y = OneHotLabel::new(label, k)?;
        let (loss, g) = feature_loss_and_grad(kind, outputs.row(r), &y, schedule)?;
        total += loss;
        for (dst, v) in grad.row_mut(r).iter_mut().zip(g) {
            *dst = v / n;
        }
    }
    Ok((total / n, grad))
}
