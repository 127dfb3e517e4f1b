//! Dense network primitives with exact analytic gradients.
//!
//! Everything runs at `f64`. Weights are row-major with shape `(out_dim, in_dim)`.
//! Hidden layers use a leaky rectifier, the final layer is linear. A forward pass
//! can take optional per-layer "lateral" vectors that are added to a layer's
//! pre-activation; the policy uses this hook for adapters between experts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `(out_dim, in_dim)`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform fan-in initialization, `U(-1/sqrt(in), 1/sqrt(in))` scaled by `gain`.
    pub fn uniform<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, gain: f64, rng: &mut R) -> Self {
        let bound = gain / (in_dim as f64).sqrt();
        let mut layer = Self::zeros(in_dim, out_dim);
        for w in &mut layer.weights {
            *w = rng.random_range(-bound..=bound);
        }
        for b in &mut layer.bias {
            *b = rng.random_range(-bound..=bound);
        }
        layer
    }

    pub fn from_parts(in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Shape(format!(
                "layer {out_dim}x{in_dim} got {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// `out = W x + b`
    pub fn affine(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.in_dim).zip(&self.bias))
        {
            *o = b + dot(row, x);
        }
    }

    /// Adds `W x` (no bias) into `out`.
    pub fn add_linear(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.in_dim)) {
            *o += dot(row, x);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient of a single dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weights: vec![0.0; layer.weights.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }
}

/// Multi-layer perceptron: leaky rectifier on every hidden layer, linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    pub slope: f64,
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input fed to each layer (`inputs[0]` is the network input).
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer, lateral terms included.
    pub pre: Vec<Vec<f64>>,
}

impl MlpCache {
    /// Post-activation output of hidden layer `l` (the input of layer `l + 1`).
    pub fn hidden(&self, l: usize) -> &[f64] {
        &self.inputs[l + 1]
    }

    pub fn output(&self) -> &[f64] {
        self.pre.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<LayerGrad>,
    /// dL/d(pre-activation) per layer; used to form adapter gradients.
    pub pre: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl MlpGrad {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net.layers.iter().map(LayerGrad::zeros_like).collect(),
            pre: net.layers.iter().map(|l| vec![0.0; l.out_dim]).collect(),
            input: vec![0.0; net.input_dim()],
        }
    }

    /// Accumulates parameter gradients of `other` into `self`.
    pub fn accumulate(&mut self, other: &MlpGrad) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            axpy(1.0, &b.weights, &mut a.weights);
            axpy(1.0, &b.bias, &mut a.bias);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= s);
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl Mlp {
    /// Builds `input -> hidden... -> output` with fan-in uniform init. The
    /// final layer is scaled by `out_gain`.
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        out_gain: f64,
        rng: &mut R,
    ) -> Self {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input);
        dims.extend_from_slice(hidden);
        dims.push(output);
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n { out_gain } else { 1.0 };
                DenseLayer::uniform(dims[i], dims[i + 1], gain, rng)
            })
            .collect();
        Self {
            layers,
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn from_layers(layers: Vec<DenseLayer>, slope: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::Shape(format!(
                    "layer dims do not chain: {} -> {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        Ok(Self { layers, slope })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `(out_dim, in_dim)` of every layer.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.out_dim, l.in_dim)).collect()
    }

    pub fn same_architecture(&self, other: &Mlp) -> bool {
        self.shapes() == other.shapes()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input length {} but network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        if let Some(i) = input.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("network input entry {i} is {}", input[i])));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        self.forward_lateral(input, &[])
    }

    /// Forward pass where `lateral[l]`, when present, is added to layer `l`'s
    /// pre-activation before the nonlinearity.
    pub fn forward_lateral(&self, input: &[f64], lateral: &[Option<Vec<f64>>]) -> Result<(Vec<f64>, MlpCache)> {
        self.check_input(input)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut x = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.out_dim];
            layer.affine(&x, &mut z);
            if let Some(Some(extra)) = lateral.get(l) {
                if extra.len() != z.len() {
                    return Err(Error::Shape(format!(
                        "lateral input for layer {l} has length {} but layer width is {}",
                        extra.len(),
                        z.len()
                    )));
                }
                axpy(1.0, extra, &mut z);
            }
            let next = if l + 1 < n {
                z.iter().map(|&v| leaky_relu(v, self.slope)).collect()
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut x, next));
            pre.push(z);
        }
        Ok((x, MlpCache { inputs, pre }))
    }

    /// Forward pass without caching.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let n = self.layers.len();
        let mut x = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.out_dim];
            layer.affine(&x, &mut z);
            if l + 1 < n {
                z.iter_mut().for_each(|v| *v = leaky_relu(*v, self.slope));
            }
            x = z;
        }
        Ok(x)
    }

    pub fn backward(&self, cache: &MlpCache, grad_output: &[f64]) -> Result<MlpGrad> {
        let n = self.layers.len();
        if cache.pre.len() != n || cache.inputs.len() != n {
            return Err(Error::Cache(format!(
                "cache holds {} layers, network has {n}",
                cache.pre.len()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if cache.pre[l].len() != layer.out_dim || cache.inputs[l].len() != layer.in_dim {
                return Err(Error::Cache(format!("layer {l} activations do not match its shape")));
            }
        }
        if grad_output.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "output gradient length {} but network output is {}",
                grad_output.len(),
                self.output_dim()
            )));
        }

        let mut layers = vec![None; n];
        let mut pre_grads = vec![Vec::new(); n];
        let mut delta = grad_output.to_vec();
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            if l + 1 < n {
                for (d, &z) in delta.iter_mut().zip(&cache.pre[l]) {
                    *d *= leaky_relu_grad(z, self.slope);
                }
            }
            let x = &cache.inputs[l];
            let mut gw = vec![0.0; layer.weights.len()];
            for (row, &d) in gw.chunks_exact_mut(layer.in_dim).zip(&delta) {
                if d != 0.0 {
                    axpy(d, x, row);
                }
            }
            let mut gx = vec![0.0; layer.in_dim];
            for (row, &d) in layer.weights.chunks_exact(layer.in_dim).zip(&delta) {
                if d != 0.0 {
                    axpy(d, row, &mut gx);
                }
            }
            layers[l] = Some(LayerGrad {
                weights: gw,
                bias: delta.clone(),
            });
            pre_grads[l] = std::mem::replace(&mut delta, gx);
        }
        Ok(MlpGrad {
            layers: layers.into_iter().map(|g| g.expect("every layer visited")).collect(),
            pre: pre_grads,
            input: delta,
        })
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Weight matrices only (no biases).
    pub fn weight_slices(&self) -> Vec<&[f64]> {
        self.layers.iter().map(|l| l.weights.as_slice()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(DenseLayer::is_finite)
    }
}

/// Copies every layer but the last from `src` into `dst`.
pub fn copy_except_final(src: &Mlp, dst: &mut Mlp) -> Result<()> {
    if !src.same_architecture(dst) {
        return Err(Error::Shape(format!(
            "architectures differ: {:?} vs {:?}",
            src.shapes(),
            dst.shapes()
        )));
    }
    let n = src.layers.len();
    for (d, s) in dst.layers.iter_mut().zip(&src.layers).take(n - 1) {
        d.weights.copy_from_slice(&s.weights);
        d.bias.copy_from_slice(&s.bias);
    }
    Ok(())
}

pub fn zero_final(net: &mut Mlp) {
    if let Some(last) = net.layers.last_mut() {
        last.weights.iter_mut().for_each(|w| *w = 0.0);
        last.bias.iter_mut().for_each(|b| *b = 0.0);
    }
}

/// Frobenius norm over a collection of parameter blocks.
pub fn frobenius_norm<'a>(blocks: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    blocks
        .into_iter()
        .flat_map(|b| b.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Adaptive moment estimation over an ordered list of parameter blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(3e-4)
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One bias-corrected update. Moment buffers are shaped on the first call
    /// and must match on every later call.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameter blocks but {} gradient blocks",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::Shape(format!(
                    "block {i}: {} parameters but {} gradients",
                    p.len(),
                    g.len()
                )));
            }
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len() || self.m.iter().zip(grads).any(|(m, g)| m.len() != g.len()) {
            return Err(Error::Shape("optimizer state does not match parameter layout".into()));
        }

        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - self.beta1.powf(t);
        let c2 = 1.0 - self.beta2.powf(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
