//! Small fully connected ReLU networks with explicit backpropagation, and
//! the Adam optimizer.
//!
//! Parameters are flattened layer by layer, weights (row-major, `out × in`)
//! followed by biases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AffineRepr {
    inputs: usize,
    outputs: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

/// `y = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AffineRepr", into = "AffineRepr")]
pub struct AffineMap {
    inputs: usize,
    outputs: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl TryFrom<AffineRepr> for AffineMap {
    type Error = Error;
    fn try_from(r: AffineRepr) -> Result<Self> {
        AffineMap::new(r.outputs, r.inputs, r.weight, r.bias)
    }
}

impl From<AffineMap> for AffineRepr {
    fn from(a: AffineMap) -> Self {
        AffineRepr {
            inputs: a.inputs,
            outputs: a.outputs,
            weight: a.weight,
            bias: a.bias,
        }
    }
}

impl AffineMap {
    pub fn new(outputs: usize, inputs: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        check_len("affine weight", outputs * inputs, weight.len())?;
        check_len("affine bias", outputs, bias.len())?;
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("affine map entries"));
        }
        Ok(AffineMap {
            inputs,
            outputs,
            weight,
            bias,
        })
    }

    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        AffineMap {
            inputs,
            outputs,
            weight: vec![0.0; outputs * inputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut a = AffineMap::zeros(dim, dim);
        for i in 0..dim {
            a.weight[i * dim + i] = 1.0;
        }
        a
    }

    /// Weights uniform in `[-1/√in, 1/√in]`, zero biases.
    pub fn random<R: Rng + ?Sized>(outputs: usize, inputs: usize, rng: &mut R) -> Self {
        let s = 1.0 / (inputs.max(1) as f64).sqrt();
        let weight = (0..outputs * inputs)
            .map(|_| rng.random_range(-s..=s))
            .collect();
        AffineMap {
            inputs,
            outputs,
            weight,
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weight[i * self.inputs + j]
    }

    pub fn set_weight(&mut self, i: usize, j: usize, value: f64) {
        self.weight[i * self.inputs + j] = value;
    }

    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.weight[i * self.inputs..(i + 1) * self.inputs];
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        out
    }

    /// `Wᵀ y`.
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.inputs];
        for (i, yi) in y.iter().enumerate() {
            if *yi == 0.0 {
                continue;
            }
            let row = &self.weight[i * self.inputs..(i + 1) * self.inputs];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * yi;
            }
        }
        out
    }
}

/// Affine layers with ReLU between them and an identity output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mlp {
    layers: Vec<AffineMap>,
}

/// Cached activations of one forward pass; `inputs[k]` is the input of layer
/// `k` and `pre[k]` its pre-activation.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.pre.last().expect("non-empty network")
    }

    /// Smallest |pre-activation| over hidden units; used to skip points near
    /// a ReLU kink in finite-difference checks.
    pub fn min_hidden_margin(&self) -> f64 {
        let hidden = self.pre.len().saturating_sub(1);
        self.pre[..hidden]
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

impl Mlp {
    pub fn new(layers: Vec<AffineMap>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            check_len("layer chaining", pair[0].outputs, pair[1].inputs)?;
        }
        Ok(Mlp { layers })
    }

    pub fn single(layer: AffineMap) -> Self {
        Mlp {
            layers: vec![layer],
        }
    }

    /// Random network with widths `dims = [in, h1, ..., out]`.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument("need at least input and output widths".into()));
        }
        Mlp::new(
            dims.windows(2)
                .map(|w| AffineMap::random(w[1], w[0], rng))
                .collect(),
        )
    }

    pub fn layers(&self) -> &[AffineMap] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [AffineMap] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(AffineMap::num_params).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("network parameters", self.num_params(), params.len())?;
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len("network input", self.input_dim(), input.len())?;
        let mut h = input.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h);
            if k < last {
                relu_in_place(&mut h);
            }
        }
        Ok(h)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        check_len("network input", self.input_dim(), input.len())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = input.to_vec();
        for layer in &self.layers {
            let z = layer.apply(&h);
            inputs.push(h);
            h = z.clone();
            relu_in_place(&mut h);
            pre.push(z);
        }
        Ok(Trace { inputs, pre })
    }

    /// Adds `∂⟨upstream, output⟩/∂params` into `grad` and returns the
    /// gradient with respect to the network input. ReLU'(0) is taken as 0.
    pub fn backward(&self, trace: &Trace, upstream: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        check_len("upstream gradient", self.output_dim(), upstream.len())?;
        check_len("gradient buffer", self.num_params(), grad.len())?;
        let offsets = self.layer_offsets();
        let mut delta = upstream.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let x = &trace.inputs[k];
            let base = offsets[k];
            let nw = layer.weight.len();
            for (i, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut grad[base + i * layer.inputs..base + (i + 1) * layer.inputs];
                for (g, xv) in row.iter_mut().zip(x) {
                    *g += d * xv;
                }
                grad[base + nw + i] += d;
            }
            let mut back = layer.apply_transpose(&delta);
            if k > 0 {
                for (b, z) in back.iter_mut().zip(&trace.pre[k - 1]) {
                    if *z <= 0.0 {
                        *b = 0.0;
                    }
                }
            }
            delta = back;
        }
        Ok(delta)
    }

    /// Gradient of `⟨upstream, forward(input)⟩` with respect to all
    /// parameters.
    pub fn grad_params(&self, input: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let trace = self.forward_trace(input)?;
        let mut grad = vec![0.0; self.num_params()];
        self.backward(&trace, upstream, &mut grad)?;
        Ok(grad)
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for l in &self.layers {
            offsets.push(acc);
            acc += l.num_params();
        }
        offsets
    }
}

fn relu_in_place(h: &mut [f64]) {
    for v in h.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam. `step` expects the gradient of a loss to minimize.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
    poisoned: bool,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            first: vec![0.0; len],
            second: vec![0.0; len],
            step: 0,
            poisoned: false,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len("adam parameters", self.first.len(), params.len())?;
        check_len("adam gradient", self.first.len(), grads.len())?;
        if self.poisoned || grads.iter().any(|g| !g.is_finite()) {
            self.poisoned = true;
            return Err(Error::PoisonedState { step: self.step });
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.first[i] = beta1 * self.first[i] + (1.0 - beta1) * g;
            self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * g * g;
            let m_hat = self.first[i] / c1;
            let v_hat = self.second[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
