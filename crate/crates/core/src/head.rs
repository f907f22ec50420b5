//! Evidential classification head.
//!
//! Features `f` become evidence `e = softplus(f)`, concentrations
//! `α = e + 1` with strength `S = Σα`, and a subjective opinion with belief
//! masses `b_k = e_k / S`, uncertainty `u = K / S` and expected class
//! probabilities `p_k = α_k / S`. Beliefs and uncertainty always sum to one.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax, log_gamma, softplus};

/// Non-negative per-class evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct Evidence(Vec<f64>);

impl Evidence {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("evidence"));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidAlpha(alloc::format!("evidence {v} is negative or non-finite")));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Dirichlet concentration vector with cached strength `S = Σα`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletParams {
    alpha: Vec<f64>,
    strength: f64,
}

impl DirichletParams {
    /// Accepts any concentration vector with finite, strictly positive entries.
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Empty("concentration"));
        }
        if let Some(a) = alpha.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::InvalidAlpha(alloc::format!("concentration {a} must be finite and positive")));
        }
        let strength = alpha.iter().sum();
        Ok(Self { alpha, strength })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn classes(&self) -> usize {
        self.alpha.len()
    }

    /// Errors unless every `α_k ≥ 1`, the range evidence-derived parameters live in.
    pub fn require_evidential(&self) -> Result<()> {
        match self.alpha.iter().find(|&&a| a < 1.0) {
            Some(a) => Err(Error::InvalidAlpha(alloc::format!("concentration {a} is below 1"))),
            None => Ok(()),
        }
    }
}

/// Belief masses, uncertainty and expected probabilities for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectiveOpinion {
    pub beliefs: Vec<f64>,
    pub uncertainty: f64,
    pub probs: Vec<f64>,
    pub predicted_class: usize,
}

/// `e = softplus(f)`, elementwise.
pub fn evidence_from_features(features: &[f64]) -> Result<Evidence> {
    if let Some(v) = features.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(alloc::format!("feature {v}")));
    }
    Evidence::new(features.iter().map(|&f| softplus(f)).collect())
}

/// `α = e + 1`.
pub fn dirichlet_from_evidence(e: &Evidence) -> DirichletParams {
    let alpha: Vec<f64> = e.0.iter().map(|v| v + 1.0).collect();
    let strength = alpha.iter().sum();
    DirichletParams { alpha, strength }
}

/// `b_k = (α_k - 1)/S`, `u = K/S`, `p_k = α_k/S`.
///
/// The predicted class is the argmax of `α` with ties going to the lowest
/// index; `b`, `p` and `α` share that argmax.
pub fn opinion_from_alpha(d: &DirichletParams) -> SubjectiveOpinion {
    let s = d.strength;
    let k = d.alpha.len() as f64;
    SubjectiveOpinion {
        beliefs: d.alpha.iter().map(|a| (a - 1.0) / s).collect(),
        uncertainty: k / s,
        probs: d.alpha.iter().map(|a| a / s).collect(),
        predicted_class: argmax(&d.alpha),
    }
}

/// Features straight to an opinion.
pub fn opinion_from_features(features: &[f64]) -> Result<SubjectiveOpinion> {
    let e = evidence_from_features(features)?;
    Ok(opinion_from_alpha(&dirichlet_from_evidence(&e)))
}

/// `ln B(α) = Σ ln Γ(α_k) - ln Γ(Σα)`, the log multinomial beta function.
pub fn log_multinomial_beta(alpha: &[f64]) -> Result<f64> {
    let mut acc = 0.0;
    for &a in alpha {
        acc += log_gamma(a)?;
    }
    Ok(acc - log_gamma(alpha.iter().sum())?)
}

/// Log density of `Dir(α)` at an interior point of the simplex.
pub fn dirichlet_log_pdf(d: &DirichletParams, p: &[f64]) -> Result<f64> {
    if p.len() != d.classes() {
        return Err(Error::DimensionMismatch { expected: d.classes(), found: p.len() });
    }
    let total: f64 = p.iter().sum();
    if p.iter().any(|&v| !(v > 0.0 && v < 1.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::OffSimplex);
    }
    let kernel: f64 = d.alpha.iter().zip(p).map(|(a, v)| (a - 1.0) * crate::math::ln(*v)).sum();
    Ok(kernel - log_multinomial_beta(&d.alpha)?)
}
