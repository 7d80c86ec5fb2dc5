//! Minimal feed-forward network engine.
//!
//! An [`Mlp`] is a stack of dense layers, each optionally followed by layer
//! normalization, then an elementwise activation. Networks are generic over
//! the float type so the same architecture can be trained in `f32` and
//! checked against finite differences in `f64`.

mod adam;
mod matrix;
mod norm;
mod snapshot;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{Adam, AdamConfig};
pub use matrix::Matrix;
pub use norm::{layer_norm, LAYER_NORM_EPS};
pub use snapshot::SnapshotError;

pub(crate) use matrix::{axpy, dot};

/// Negative-side slope of [`Activation::LeakyRelu`].
pub const LEAKY_RELU_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Float>(self, u: T) -> T {
        match self {
            Activation::Relu => u.max(T::zero()),
            Activation::LeakyRelu => {
                if u > T::zero() {
                    u
                } else {
                    u * T::from(LEAKY_RELU_SLOPE).unwrap()
                }
            }
            Activation::Tanh => u.tanh(),
            Activation::Identity => u,
        }
    }

    /// Derivative given the pre-activation `u` and the output `a`.
    #[inline]
    fn derivative<T: Float>(self, u: T, a: T) -> T {
        match self {
            Activation::Relu => {
                if u > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu => {
                if u > T::zero() {
                    T::one()
                } else {
                    T::from(LEAKY_RELU_SLOPE).unwrap()
                }
            }
            Activation::Tanh => T::one() - a * a,
            Activation::Identity => T::one(),
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::LeakyRelu => 1,
            Activation::Tanh => 2,
            Activation::Identity => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Activation::Relu,
            1 => Activation::LeakyRelu,
            2 => Activation::Tanh,
            3 => Activation::Identity,
            _ => return None,
        })
    }
}

/// Architecture of a multilayer perceptron.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width, hidden widths, output width.
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    /// Layer-normalize every hidden pre-activation.
    pub hidden_layer_norm: bool,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, hidden: Activation, output: Activation) -> Self {
        Self {
            widths,
            hidden,
            output,
            hidden_layer_norm: false,
        }
    }

    pub fn with_layer_norm(mut self) -> Self {
        self.hidden_layer_norm = true;
        self
    }

    /// `hidden_layers` layers of `width` units between `input` and `output`.
    pub fn uniform(
        input: usize,
        width: usize,
        hidden_layers: usize,
        output: usize,
        hidden: Activation,
        out_act: Activation,
    ) -> Self {
        let mut widths = vec![input];
        widths.extend(core::iter::repeat_n(width, hidden_layers));
        widths.push(output);
        Self::new(widths, hidden, out_act)
    }

    fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!("invalid layer widths {:?}", self.widths)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Norm<T> {
    pub(crate) gain: Vec<T>,
    pub(crate) offset: Vec<T>,
    grad_gain: Vec<T>,
    grad_offset: Vec<T>,
}

/// One affine layer plus its normalization and activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs x inputs`.
    pub(crate) weight: Vec<T>,
    pub(crate) bias: Vec<T>,
    pub(crate) activation: Activation,
    pub(crate) norm: Option<Norm<T>>,
    grad_weight: Vec<T>,
    grad_bias: Vec<T>,
}

impl<T: Float> Dense<T> {
    fn zeros(inputs: usize, outputs: usize, activation: Activation, layer_norm: bool) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
            activation,
            norm: layer_norm.then(|| Norm {
                gain: vec![T::one(); outputs],
                offset: vec![T::zero(); outputs],
                grad_gain: vec![T::zero(); outputs],
                grad_offset: vec![T::zero(); outputs],
            }),
            grad_weight: vec![T::zero(); inputs * outputs],
            grad_bias: vec![T::zero(); outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    /// Weight matrix, row-major `outputs x inputs`.
    pub fn weight(&self) -> &[T] {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut [T] {
        &mut self.weight
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    pub fn grad_weight(&self) -> &[T] {
        &self.grad_weight
    }

    pub fn grad_bias(&self) -> &[T] {
        &self.grad_bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn has_layer_norm(&self) -> bool {
        self.norm.is_some()
    }

    /// Forward one layer. `xhat`/`inv_std` are only written when normalized.
    fn forward_into(
        &self,
        x: &Matrix<T>,
        pre: &mut Matrix<T>,
        xhat: &mut Matrix<T>,
        inv_std: &mut Vec<T>,
        out: &mut Matrix<T>,
    ) {
        let rows = x.rows();
        pre.reset(rows, self.outputs);
        out.reset(rows, self.outputs);
        for r in 0..rows {
            let xr = x.row(r);
            let pr = pre.row_mut(r);
            for o in 0..self.outputs {
                pr[o] = dot(&self.weight[o * self.inputs..(o + 1) * self.inputs], xr) + self.bias[o];
            }
        }
        if let Some(norm) = &self.norm {
            xhat.reset(rows, self.outputs);
            inv_std.clear();
            for r in 0..rows {
                let (mean, istd) = norm::moments(pre.row(r));
                inv_std.push(istd);
                let hr = xhat.row_mut(r);
                for (h, &p) in hr.iter_mut().zip(pre.row(r)) {
                    *h = (p - mean) * istd;
                }
                let pr = pre.row_mut(r);
                for o in 0..self.outputs {
                    pr[o] = norm.gain[o] * hr[o] + norm.offset[o];
                }
            }
        }
        let act = self.activation;
        for (a, &u) in out.as_mut_slice().iter_mut().zip(pre.as_slice()) {
            *a = act.apply(u);
        }
    }

    /// Backward one layer given the gradient w.r.t. its output.
    /// Returns the gradient w.r.t. its input.
    fn backward(&mut self, cache: &LayerCache<T>, upstream: &Matrix<T>, accumulate: bool) -> Matrix<T> {
        let rows = upstream.rows();
        let mut delta = upstream.clone();
        let act = self.activation;
        for ((d, &u), &a) in delta
            .as_mut_slice()
            .iter_mut()
            .zip(cache.pre.as_slice())
            .zip(cache.out.as_slice())
        {
            *d = *d * act.derivative(u, a);
        }
        if let Some(norm) = &mut self.norm {
            let n = T::from(self.outputs).unwrap();
            for r in 0..rows {
                let hr = cache.xhat.row(r);
                let dr = delta.row_mut(r);
                if accumulate {
                    for o in 0..self.outputs {
                        norm.grad_gain[o] = norm.grad_gain[o] + dr[o] * hr[o];
                        norm.grad_offset[o] = norm.grad_offset[o] + dr[o];
                    }
                }
                let mut mean_d = T::zero();
                let mut mean_dh = T::zero();
                for o in 0..self.outputs {
                    let dh = dr[o] * norm.gain[o];
                    dr[o] = dh;
                    mean_d = mean_d + dh;
                    mean_dh = mean_dh + dh * hr[o];
                }
                mean_d = mean_d / n;
                mean_dh = mean_dh / n;
                let istd = cache.inv_std[r];
                for o in 0..self.outputs {
                    dr[o] = istd * (dr[o] - mean_d - hr[o] * mean_dh);
                }
            }
        }
        let mut dx = Matrix::zeros(rows, self.inputs);
        for r in 0..rows {
            let dr = delta.row(r);
            let xr = cache.input.row(r);
            let dxr = dx.row_mut(r);
            for o in 0..self.outputs {
                let g = dr[o];
                if g == T::zero() {
                    continue;
                }
                let w = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                axpy(g, w, dxr);
                if accumulate {
                    self.grad_bias[o] = self.grad_bias[o] + g;
                    axpy(g, xr, &mut self.grad_weight[o * self.inputs..(o + 1) * self.inputs]);
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerCache<T> {
    input: Matrix<T>,
    pre: Matrix<T>,
    xhat: Matrix<T>,
    inv_std: Vec<T>,
    out: Matrix<T>,
}

impl<T: Float> LayerCache<T> {
    fn empty() -> Self {
        Self {
            input: Matrix::zeros(0, 0),
            pre: Matrix::zeros(0, 0),
            xhat: Matrix::zeros(0, 0),
            inv_std: Vec::new(),
            out: Matrix::zeros(0, 0),
        }
    }
}

/// Feed-forward network with gradient buffers and a training cache.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    spec: MlpSpec,
    layers: Vec<Dense<T>>,
    cache: Vec<LayerCache<T>>,
    cached: bool,
}

impl<T: Float> Mlp<T> {
    /// All parameters zero (layer-norm gains one).
    pub fn zeros(spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.widths.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let last = k + 1 == n;
                Dense::zeros(
                    spec.widths[k],
                    spec.widths[k + 1],
                    if last { spec.output } else { spec.hidden },
                    spec.hidden_layer_norm && !last,
                )
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
            cache: (0..n).map(|_| LayerCache::empty()).collect(),
            cached: false,
        })
    }

    /// Uniform fan-in initialization in `±1/sqrt(fan_in)` for weights and biases.
    pub fn new<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *w = T::from(rng.random_range(-bound..bound)).unwrap();
            }
        }
        Ok(net)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn input_width(&self) -> usize {
        self.spec.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.spec.widths.last().unwrap()
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layer_mut(&mut self, k: usize) -> &mut Dense<T> {
        &mut self.layers[k]
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.input_width() {
            return Err(Error::InputContract(format!(
                "network expects input width {}, got {}",
                self.input_width(),
                x.cols()
            )));
        }
        Ok(())
    }

    /// Pure forward pass; does not touch the training cache.
    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        let mut pre = Matrix::zeros(0, 0);
        let mut xhat = Matrix::zeros(0, 0);
        let mut inv_std = Vec::new();
        let mut out = Matrix::zeros(0, 0);
        for layer in &self.layers {
            layer.forward_into(&cur, &mut pre, &mut xhat, &mut inv_std, &mut out);
            core::mem::swap(&mut cur, &mut out);
        }
        Ok(cur)
    }

    /// Forward pass for a single input row.
    pub fn forward_one(&self, x: &[T]) -> Result<Vec<T>> {
        let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.forward(&m)?.into_vec())
    }

    /// Forward pass that records intermediate activations for [`Mlp::backward`].
    pub fn forward_train(&mut self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(x)?;
        for k in 0..self.layers.len() {
            let (done, rest) = self.cache.split_at_mut(k);
            let c = &mut rest[0];
            match done.last() {
                Some(prev) => c.input.copy_from(&prev.out),
                None => c.input.copy_from(x),
            }
            self.layers[k].forward_into(&c.input, &mut c.pre, &mut c.xhat, &mut c.inv_std, &mut c.out);
        }
        self.cached = true;
        Ok(self.cache.last().unwrap().out.clone())
    }

    fn backward_impl(&mut self, upstream: &Matrix<T>, accumulate: bool) -> Result<Matrix<T>> {
        if !self.cached {
            return Err(Error::State("backward called without a cached forward pass".into()));
        }
        let out = &self.cache.last().unwrap().out;
        if upstream.rows() != out.rows() || upstream.cols() != out.cols() {
            return Err(Error::InputContract(format!(
                "upstream gradient is {}x{}, output was {}x{}",
                upstream.rows(),
                upstream.cols(),
                out.rows(),
                out.cols()
            )));
        }
        let mut grad = upstream.clone();
        for k in (0..self.layers.len()).rev() {
            grad = self.layers[k].backward(&self.cache[k], &grad, accumulate);
        }
        Ok(grad)
    }

    /// Backpropagates `upstream` (gradient w.r.t. the last cached output),
    /// accumulating into the parameter gradient buffers. Returns the
    /// gradient w.r.t. the input batch.
    pub fn backward(&mut self, upstream: &Matrix<T>) -> Result<Matrix<T>> {
        self.backward_impl(upstream, true)
    }

    /// Like [`Mlp::backward`] but leaves parameter gradients untouched.
    pub fn backward_input(&mut self, upstream: &Matrix<T>) -> Result<Matrix<T>> {
        self.backward_impl(upstream, false)
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            layer.grad_weight.iter_mut().for_each(|g| *g = T::zero());
            layer.grad_bias.iter_mut().for_each(|g| *g = T::zero());
            if let Some(n) = &mut layer.norm {
                n.grad_gain.iter_mut().for_each(|g| *g = T::zero());
                n.grad_offset.iter_mut().for_each(|g| *g = T::zero());
            }
        }
    }

    /// `(parameters, gradients)` slices in canonical order, tagged with layer index.
    pub(crate) fn param_groups(&mut self) -> Vec<(usize, &mut [T], &mut [T])> {
        let mut groups = Vec::with_capacity(self.layers.len() * 4);
        for (k, layer) in self.layers.iter_mut().enumerate() {
            groups.push((k, &mut layer.weight[..], &mut layer.grad_weight[..]));
            groups.push((k, &mut layer.bias[..], &mut layer.grad_bias[..]));
            if let Some(n) = &mut layer.norm {
                groups.push((k, &mut n.gain[..], &mut n.grad_gain[..]));
                groups.push((k, &mut n.offset[..], &mut n.grad_offset[..]));
            }
        }
        groups
    }

    fn param_slices(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(&layer.weight[..]);
            out.push(&layer.bias[..]);
            if let Some(n) = &layer.norm {
                out.push(&n.gain[..]);
                out.push(&n.offset[..]);
            }
        }
        out
    }

    fn grad_slices(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(&layer.grad_weight[..]);
            out.push(&layer.grad_bias[..]);
            if let Some(n) = &layer.norm {
                out.push(&n.grad_gain[..]);
                out.push(&n.grad_offset[..]);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// All parameters flattened in canonical order.
    pub fn params(&self) -> Vec<T> {
        self.param_slices().concat()
    }

    /// All gradients flattened in canonical order.
    pub fn grads(&self) -> Vec<T> {
        self.grad_slices().concat()
    }

    pub fn set_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::InputContract(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut i = 0;
        for (_, p, _) in self.param_groups() {
            p.copy_from_slice(&flat[i..i + p.len()]);
            i += p.len();
        }
        Ok(())
    }

    /// Copies parameters from a network of identical architecture.
    pub fn copy_params_from(&mut self, other: &Mlp<T>) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::InputContract("architecture mismatch".into()));
        }
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.weight.copy_from_slice(&src.weight);
            dst.bias.copy_from_slice(&src.bias);
            if let (Some(d), Some(s)) = (&mut dst.norm, &src.norm) {
                d.gain.copy_from_slice(&s.gain);
                d.offset.copy_from_slice(&s.offset);
            }
        }
        Ok(())
    }

    /// `self <- (1 - tau) * self + tau * source`.
    pub fn polyak_from(&mut self, source: &Mlp<T>, tau: T) -> Result<()> {
        if self.spec != source.spec {
            return Err(Error::InputContract("architecture mismatch".into()));
        }
        let keep = T::one() - tau;
        let src = source.param_slices();
        for ((_, dst, _), s) in self.param_groups().into_iter().zip(src) {
            for (d, &v) in dst.iter_mut().zip(s) {
                *d = keep * *d + tau * v;
            }
        }
        Ok(())
    }

    /// Euclidean distance between the parameter vectors of two networks.
    pub fn param_distance(&self, other: &Mlp<T>) -> T {
        self.params()
            .iter()
            .zip(other.params())
            .fold(T::zero(), |acc, (&a, b)| acc + (a - b) * (a - b))
            .sqrt()
    }

    /// Converts the parameter precision.
    pub fn cast<U: Float>(&self) -> Mlp<U> {
        let mut out = Mlp::<U>::zeros(&self.spec).expect("spec already validated");
        let flat: Vec<U> = self.params().iter().map(|v| U::from(*v).unwrap()).collect();
        out.set_params(&flat).expect("same architecture");
        out
    }
}

#[cfg(test)]
mod tests;
