//! Fully connected ReLU network producing the per-class feature vector that
//! the evidential head (or a softmax layer) consumes.
//!
//! Layers compute `Z = X·W + b` with `W` stored `fan_in × fan_out`. Hidden
//! layers apply ReLU and, when a [`DropoutMask`] is supplied, inverted
//! dropout. The output layer is linear. Gradients are derived by hand per
//! layer and validated against central finite differences with
//! [`finite_diff_check`].

use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::{math, rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// Number of classes `K`.
    pub output_dim: usize,
    pub activation: Activation,
    /// Train-time dropout on hidden activations; only the MC-dropout baseline sets it.
    pub dropout_rate: f64,
    pub seed: u64,
}

impl MlpConfig {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: alloc::vec![32, 32],
            output_dim,
            activation: Activation::Relu,
            dropout_rate: 0.0,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config(format!(
                "zero-sized layer in {} -> {:?} -> {}",
                self.input_dim, self.hidden_dims, self.output_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden_dims.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden_dims);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `fan_in × fan_out`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Weights and biases of every layer.
///
/// Gradients returned by [`backward`] use the same type and layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
}

impl MlpParams {
    /// All-zero parameters with the shapes `cfg` prescribes.
    pub fn zeros(cfg: &MlpConfig) -> Result<Self> {
        cfg.validate()?;
        let layers = cfg
            .layer_dims()
            .into_iter()
            .map(|(i, o)| DenseLayer { weights: Matrix::zeros(i, o), bias: alloc::vec![0.0; o] })
            .collect();
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weights.rows())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.cols())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.as_slice().len() + l.bias.len()).sum()
    }

    /// Checks the shapes against a configuration.
    pub fn matches(&self, cfg: &MlpConfig) -> bool {
        let dims = cfg.layer_dims();
        dims.len() == self.layers.len()
            && dims.iter().zip(&self.layers).all(|(&(i, o), l)| l.weights.shape() == (i, o) && l.bias.len() == o)
    }

    /// Flat views over every parameter block: weights then bias, layer by layer.
    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn get_flat(&self, mut idx: usize) -> f64 {
        for b in self.blocks() {
            if idx < b.len() {
                return b[idx];
            }
            idx -= b.len();
        }
        panic!("parameter index out of range");
    }

    fn set_flat(&mut self, mut idx: usize, v: f64) {
        for b in self.blocks_mut() {
            if idx < b.len() {
                b[idx] = v;
                return;
            }
            idx -= b.len();
        }
        panic!("parameter index out of range");
    }
}

/// He-normal weights (`sd = sqrt(2 / fan_in)`), zero biases, seeded by `cfg.seed`.
pub fn init_params(cfg: &MlpConfig) -> Result<MlpParams> {
    let mut params = MlpParams::zeros(cfg)?;
    let mut rng = rng_from_seed(cfg.seed);
    for layer in &mut params.layers {
        let fan_in = layer.weights.rows() as f64;
        let normal = Normal::new(0.0, math::sqrt(2.0 / fan_in))
            .map_err(|e| Error::Config(format!("weight distribution: {e}")))?;
        for w in layer.weights.as_mut_slice() {
            *w = normal.sample(&mut rng);
        }
    }
    Ok(params)
}

/// Per-hidden-layer inverted-dropout masks: each entry is `0` or `1/(1-rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    layers: Vec<Matrix>,
}

impl DropoutMask {
    pub fn sample(cfg: &MlpConfig, batch_rows: usize, rate: f64, rng: &mut Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let layers = cfg
            .hidden_dims
            .iter()
            .map(|&w| {
                let mut m = Matrix::zeros(batch_rows, w);
                for v in m.as_mut_slice() {
                    *v = if rng.random::<f64>() < rate { 0.0 } else { keep_scale };
                }
                m
            })
            .collect();
        Ok(Self { layers })
    }
}

/// Cached intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Matrix,
    /// Pre-activation of every layer, including the output layer.
    pre: Vec<Matrix>,
    /// Post-ReLU (and post-dropout) activation of every hidden layer.
    hidden: Vec<Matrix>,
    masks: Option<Vec<Matrix>>,
}

impl ForwardTrace {
    pub fn batch_rows(&self) -> usize {
        self.input.rows()
    }
}

fn affine(x: &Matrix, layer: &DenseLayer) -> Result<Matrix> {
    let mut z = x.matmul(&layer.weights)?;
    for r in 0..z.rows() {
        for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    Ok(z)
}

/// Runs the network on a batch (one sample per row).
pub fn forward(params: &MlpParams, batch: &Matrix, mask: Option<&DropoutMask>) -> Result<(Matrix, ForwardTrace)> {
    if batch.cols() != params.input_dim() {
        return Err(Error::DimensionMismatch { expected: params.input_dim(), found: batch.cols() });
    }
    let n_hidden = params.layers.len() - 1;
    if let Some(m) = mask {
        if m.layers.len() != n_hidden
            || m.layers.iter().zip(&params.layers).any(|(mm, l)| mm.shape() != (batch.rows(), l.weights.cols()))
        {
            return Err(Error::Shape("dropout mask does not match batch and hidden widths".into()));
        }
    }
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut hidden = Vec::with_capacity(n_hidden);
    let mut current = batch.clone();
    for (i, layer) in params.layers.iter().enumerate() {
        let z = affine(&current, layer)?;
        if i == n_hidden {
            pre.push(z.clone());
            current = z;
            break;
        }
        let mut a = z.clone();
        for v in a.as_mut_slice() {
            *v = v.max(0.0);
        }
        if let Some(m) = mask {
            for (v, s) in a.as_mut_slice().iter_mut().zip(m.layers[i].as_slice()) {
                *v *= s;
            }
        }
        pre.push(z);
        hidden.push(a.clone());
        current = a;
    }
    let trace = ForwardTrace { input: batch.clone(), pre, hidden, masks: mask.map(|m| m.layers.clone()) };
    Ok((current, trace))
}

/// Forward pass without keeping a trace.
pub fn logits(params: &MlpParams, batch: &Matrix) -> Result<Matrix> {
    forward(params, batch, None).map(|(out, _)| out)
}

/// Exact gradients of `sum(grad_out ⊙ output)` with respect to every parameter.
pub fn backward(trace: &ForwardTrace, params: &MlpParams, grad_out: &Matrix) -> Result<MlpParams> {
    let n_layers = params.layers.len();
    if trace.pre.len() != n_layers || trace.hidden.len() + 1 != n_layers {
        return Err(Error::StaleTrace(format!("trace has {} layers, network has {n_layers}", trace.pre.len())));
    }
    for (z, l) in trace.pre.iter().zip(&params.layers) {
        if z.shape() != (trace.batch_rows(), l.weights.cols()) {
            return Err(Error::StaleTrace("cached pre-activation shape differs from layer".into()));
        }
    }
    if grad_out.shape() != (trace.batch_rows(), params.output_dim()) {
        return Err(Error::StaleTrace(format!(
            "gradient is {}x{}, output is {}x{}",
            grad_out.rows(),
            grad_out.cols(),
            trace.batch_rows(),
            params.output_dim()
        )));
    }

    let mut grads: Vec<DenseLayer> = Vec::with_capacity(n_layers);
    let mut delta = grad_out.clone();
    for i in (0..n_layers).rev() {
        let layer_input = if i == 0 { &trace.input } else { &trace.hidden[i - 1] };
        let weights = layer_input.t_matmul(&delta)?;
        let bias = delta.column_sums();
        grads.push(DenseLayer { weights, bias });
        if i == 0 {
            break;
        }
        let mut upstream = delta.matmul_t(&params.layers[i].weights)?;
        let z = &trace.pre[i - 1];
        for (g, &zv) in upstream.as_mut_slice().iter_mut().zip(z.as_slice()) {
            if zv <= 0.0 {
                *g = 0.0;
            }
        }
        if let Some(masks) = &trace.masks {
            for (g, s) in upstream.as_mut_slice().iter_mut().zip(masks[i - 1].as_slice()) {
                *g *= s;
            }
        }
        delta = upstream;
    }
    grads.reverse();
    Ok(MlpParams { layers: grads })
}

/// Compares [`backward`] with central finite differences (`h = 1e-5`).
///
/// `loss_fn` maps the network output to a scalar loss and its gradient with
/// respect to that output. Returns the largest
/// `|analytic - numeric| / (|numeric| + 1e-8)` over all parameters.
pub fn finite_diff_check<F>(params: &MlpParams, batch: &Matrix, loss_fn: F) -> Result<f64>
where
    F: Fn(&Matrix) -> Result<(f64, Matrix)>,
{
    const H: f64 = 1e-5;
    let (out, trace) = forward(params, batch, None)?;
    let (_, grad_out) = loss_fn(&out)?;
    let analytic = backward(&trace, params, &grad_out)?;

    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for idx in 0..params.num_params() {
        let original = params.get_flat(idx);
        probe.set_flat(idx, original + H);
        let plus = loss_fn(&logits(&probe, batch)?)?.0;
        probe.set_flat(idx, original - H);
        let minus = loss_fn(&logits(&probe, batch)?)?.0;
        probe.set_flat(idx, original);
        let numeric = (plus - minus) / (2.0 * H);
        let err = (analytic.get_flat(idx) - numeric).abs() / (numeric.abs() + 1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cfg(input: usize, hidden: Vec<usize>, out: usize, seed: u64) -> MlpConfig {
        MlpConfig { input_dim: input, hidden_dims: hidden, output_dim: out, activation: Activation::Relu, dropout_rate: 0.0, seed }
    }

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = rng_from_seed(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    // Independent forward oracle: per-sample loops over explicit indices.
    fn forward_oracle(params: &MlpParams, x: &[f64]) -> Vec<f64> {
        let mut act = x.to_vec();
        let last = params.layers.len() - 1;
        for (li, layer) in params.layers.iter().enumerate() {
            let (fi, fo) = layer.weights.shape();
            let mut next = vec![0.0; fo];
            for (o, slot) in next.iter_mut().enumerate() {
                let mut s = layer.bias[o];
                for (i, a) in act.iter().enumerate().take(fi) {
                    s += a * layer.weights.get(i, o);
                }
                *slot = if li == last || s > 0.0 { s } else { 0.0 };
            }
            act = next;
        }
        act
    }

    #[test]
    fn init_is_deterministic() {
        let c = cfg(3, vec![8, 8], 4, 42);
        assert_eq!(init_params(&c).unwrap(), init_params(&c).unwrap());
        let other = cfg(3, vec![8, 8], 4, 43);
        assert_ne!(init_params(&c).unwrap(), init_params(&other).unwrap());
    }

    #[test]
    fn init_shapes() {
        let p = init_params(&cfg(2, vec![4], 3, 1)).unwrap();
        assert_eq!(p.layers[0].weights.shape(), (2, 4));
        assert_eq!(p.layers[0].bias.len(), 4);
        assert_eq!(p.layers[1].weights.shape(), (4, 3));
        assert_eq!(p.layers[1].bias.len(), 3);
        assert!(p.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_rejects_zero_sized_layers() {
        assert!(init_params(&cfg(0, vec![4], 3, 1)).is_err());
        assert!(init_params(&cfg(2, vec![0], 3, 1)).is_err());
    }

    #[test]
    fn init_weight_statistics() {
        // fan_in 32, 3125 outputs: 10^5 weights
        let p = init_params(&cfg(32, vec![], 3125, 7)).unwrap();
        let w = p.layers[0].weights.as_slice();
        let n = w.len() as f64;
        let sd = (2.0f64 / 32.0).sqrt();
        let mean = w.iter().sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * sd / n.sqrt(), "mean {mean}");
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((var.sqrt() - sd).abs() < 0.01 * sd);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::zeros(&cfg(3, vec![5], 2, 0)).unwrap();
        let out = logits(&p, &random_batch(4, 3, 1)).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_linear_layer() {
        let mut p = MlpParams::zeros(&cfg(2, vec![], 2, 0)).unwrap();
        p.layers[0].weights = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let out = logits(&p, &Matrix::from_rows(&[[1.0, 2.0]]).unwrap()).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn forward_matches_oracle() {
        let p = init_params(&cfg(3, vec![7, 5], 4, 11)).unwrap();
        let x = random_batch(6, 3, 12);
        let out = logits(&p, &x).unwrap();
        for r in 0..6 {
            let want = forward_oracle(&p, x.row(r));
            for (a, b) in out.row(r).iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = init_params(&cfg(3, vec![4], 2, 1)).unwrap();
        assert!(matches!(logits(&p, &random_batch(2, 4, 0)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let p = init_params(&cfg(3, vec![4], 2, 1)).unwrap();
        let (_, trace) = forward(&p, &random_batch(5, 3, 2), None).unwrap();
        let g = backward(&trace, &p, &Matrix::zeros(5, 2)).unwrap();
        assert!(g.blocks().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn linear_layer_sum_loss_gradient_is_column_sums() {
        let p = init_params(&cfg(3, vec![], 2, 1)).unwrap();
        let x = random_batch(5, 3, 3);
        let (_, trace) = forward(&p, &x, None).unwrap();
        let ones = Matrix::from_vec(5, 2, vec![1.0; 10]).unwrap();
        let g = backward(&trace, &p, &ones).unwrap();
        let sums = x.column_sums();
        for (i, sum) in sums.iter().enumerate() {
            for o in 0..2 {
                assert!((g.layers[0].weights.get(i, o) - sum).abs() < 1e-12);
            }
        }
        assert_eq!(g.layers[0].bias, vec![5.0, 5.0]);
    }

    #[test]
    fn backward_rejects_mismatched_inputs() {
        let p = init_params(&cfg(3, vec![4], 2, 1)).unwrap();
        let (_, trace) = forward(&p, &random_batch(5, 3, 2), None).unwrap();
        assert!(matches!(backward(&trace, &p, &Matrix::zeros(4, 2)), Err(Error::StaleTrace(_))));
        let deeper = init_params(&cfg(3, vec![4, 4], 2, 1)).unwrap();
        assert!(matches!(backward(&trace, &deeper, &Matrix::zeros(5, 2)), Err(Error::StaleTrace(_))));
    }

    #[test]
    fn squared_loss_gradient_matches_finite_differences() {
        for seed in 0..3 {
            let p = init_params(&cfg(3, vec![6, 5], 3, seed)).unwrap();
            let x = random_batch(4, 3, 100 + seed);
            let err = finite_diff_check(&p, &x, |out| {
                let loss = 0.5 * out.as_slice().iter().map(|v| v * v).sum::<f64>();
                Ok((loss, out.clone()))
            })
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        let mut p = init_params(&cfg(2, vec![3], 2, 5)).unwrap();
        p.layers[0].bias = vec![-100.0; 3];
        let (_, trace) = forward(&p, &random_batch(4, 2, 9), None).unwrap();
        let g = backward(&trace, &p, &Matrix::from_vec(4, 2, vec![1.0; 8]).unwrap()).unwrap();
        assert!(g.layers[0].weights.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.layers[0].bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_mask_scales_and_routes_gradients() {
        let mut c = cfg(3, vec![16], 2, 3);
        c.dropout_rate = 0.5;
        let p = init_params(&c).unwrap();
        let x = random_batch(4, 3, 1);
        let mut rng = rng_from_seed(0);
        let mask = DropoutMask::sample(&c, 4, 0.5, &mut rng).unwrap();
        assert!(mask.layers[0].as_slice().iter().all(|&v| v == 0.0 || v == 2.0));
        let (_, trace) = forward(&p, &x, Some(&mask)).unwrap();
        let (_, plain) = forward(&p, &x, None).unwrap();
        for ((d, a), m) in trace.hidden[0].as_slice().iter().zip(plain.hidden[0].as_slice()).zip(mask.layers[0].as_slice()) {
            assert_eq!(*d, a * m);
        }
    }
}
