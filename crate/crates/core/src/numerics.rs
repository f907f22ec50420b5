//! Special functions and elementary transforms shared by every other module.
//!
//! Everything here is a pure `f64` function. `digamma` and `trigamma` shift
//! their argument upward with the unit recurrence and then apply the
//! asymptotic (Bernoulli) expansion; `log_gamma` does the same with the
//! Stirling series. Accuracy is therefore uniform over the whole positive
//! axis, which matters because Dirichlet concentrations range from exactly 1
//! up to large values.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Arguments are shifted above this before the asymptotic series is used.
const ASYMPTOTIC_FROM: f64 = 10.0;

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// `ln(1 + e^x)`, overflow-safe.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + math::ln_1p(math::exp(-x))
    } else {
        math::ln_1p(math::exp(x))
    }
}

/// Derivative of [`softplus`], the logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + math::exp(-x))
    } else {
        let e = math::exp(x);
        e / (1.0 + e)
    }
}

/// Natural log of the gamma function for `x > 0`.
///
/// Shifts `x` to at least 10 with `ln Γ(x) = ln Γ(x + 1) - ln x` and applies
/// the Stirling series through the `x^-13` term. Absolute error is below
/// 1e-14 near the zeros at 1 and 2, relative error below 1e-14 elsewhere.
pub fn log_gamma(x: f64) -> Result<f64> {
    if x <= 0.0 || !x.is_finite() {
        return Err(Error::Domain { function: "log_gamma", value: x });
    }
    let mut z = x;
    let mut shift = 0.0;
    while z < ASYMPTOTIC_FROM {
        shift += math::ln(z);
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // B_{2k} / (2k (2k - 1)) for k = 1..7
    let series = inv
        * (1.0 / 12.0
            + inv2
                * (-1.0 / 360.0
                    + inv2
                        * (1.0 / 1260.0
                            + inv2
                                * (-1.0 / 1680.0
                                    + inv2
                                        * (1.0 / 1188.0
                                            + inv2 * (-691.0 / 360_360.0 + inv2 * (1.0 / 156.0)))))));
    Ok((z - 0.5) * math::ln(z) - z + HALF_LN_TWO_PI + series - shift)
}

/// Digamma `ψ(x) = d/dx ln Γ(x)` for `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    if x <= 0.0 || !x.is_finite() {
        return Err(Error::Domain { function: "digamma", value: x });
    }
    let mut z = x;
    let mut acc = 0.0;
    while z < ASYMPTOTIC_FROM {
        acc -= 1.0 / z;
        z += 1.0;
    }
    let inv2 = 1.0 / (z * z);
    // B_{2k} / (2k) for k = 1..7
    let series = inv2
        * (1.0 / 12.0
            + inv2
                * (-1.0 / 120.0
                    + inv2
                        * (1.0 / 252.0
                            + inv2
                                * (-1.0 / 240.0
                                    + inv2
                                        * (1.0 / 132.0
                                            + inv2 * (-691.0 / 32_760.0 + inv2 * (1.0 / 12.0)))))));
    Ok(acc + math::ln(z) - 0.5 / z - series)
}

/// Trigamma `ψ'(x)` for `x > 0`.
pub fn trigamma(x: f64) -> Result<f64> {
    if x <= 0.0 || !x.is_finite() {
        return Err(Error::Domain { function: "trigamma", value: x });
    }
    let mut z = x;
    let mut acc = 0.0;
    while z < ASYMPTOTIC_FROM {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // 1/z + 1/(2z^2) + sum B_{2k} / z^{2k+1}
    let series = inv
        + 0.5 * inv2
        + inv
            * inv2
            * (1.0 / 6.0
                + inv2
                    * (-1.0 / 30.0
                        + inv2
                            * (1.0 / 42.0
                                + inv2
                                    * (-1.0 / 30.0
                                        + inv2 * (5.0 / 66.0 + inv2 * (-691.0 / 2730.0 + inv2 * (7.0 / 6.0)))))));
    Ok(acc + series)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Empty("softmax logits"));
    }
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(alloc::format!("softmax logit {bad}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| math::exp(z - max)).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    check_distribution(p, 1e-6)?;
    Ok(-p.iter().filter(|&&v| v > 0.0).map(|&v| v * math::ln(v)).sum::<f64>())
}

pub(crate) fn check_distribution(p: &[f64], tol: f64) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidDistribution("empty vector".into()));
    }
    if let Some(v) = p.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidDistribution(alloc::format!("component {v} is not a probability")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > tol {
        return Err(Error::InvalidDistribution(alloc::format!("components sum to {total}")));
    }
    Ok(())
}

/// Index of the largest element; ties go to the lowest index.
///
/// Panics on an empty slice.
pub fn argmax(values: &[f64]) -> usize {
    assert!(!values.is_empty(), "argmax of an empty slice");
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
