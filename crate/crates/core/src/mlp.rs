//! Coordinate MLPs: SIREN, Gauss, and WIRE style stacks.
//!
//! Layout: `hidden_layers + 2` linear layers with widths
//! `in_dim -> w -> (w -> w) x hidden_layers -> out_dim`. Every layer but the
//! last is followed by the hidden activation; the last by
//! `output_activation`. Complex (Gabor wavelet) networks keep their first
//! layer real, run complex weights afterwards, and return the real part of
//! the output.

use serde::{Deserialize, Serialize};

use crate::activation::{Activation, ActivationCache};
use crate::error::{Error, Result};
use crate::layer::LinearLayer;
use crate::rng::Rng;
use crate::tensor::{Dtype, Tensor2};

/// Rows per block when evaluating large coordinate sets.
pub const PREDICT_CHUNK: usize = 16_384;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub hidden_width: usize,
    /// Number of hidden-to-hidden layers.
    pub hidden_layers: usize,
    pub activation: Activation,
    #[serde(default = "identity")]
    pub output_activation: Activation,
}

fn identity() -> Activation {
    Activation::Identity
}

impl MlpSpec {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        hidden_width: usize,
        hidden_layers: usize,
        activation: Activation,
    ) -> Self {
        MlpSpec {
            in_dim,
            out_dim,
            hidden_width,
            hidden_layers,
            activation,
            output_activation: Activation::Identity,
        }
    }

    pub fn is_complex(&self) -> bool {
        self.activation.is_complex()
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 || self.hidden_width == 0 {
            return Err(Error::Config(format!(
                "MLP widths must be >= 1 (in {}, out {}, hidden {})",
                self.in_dim, self.out_dim, self.hidden_width
            )));
        }
        if self.output_activation.is_complex() {
            return Err(Error::Config("output activation must be real".into()));
        }
        self.activation.validate()?;
        self.output_activation.validate()
    }

    /// `(fan_in, fan_out)` of every linear layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let w = self.hidden_width;
        let mut dims = vec![(self.in_dim, w)];
        dims.extend(std::iter::repeat_n((w, w), self.hidden_layers));
        dims.push((w, self.out_dim));
        dims
    }

    fn layer_dtype(&self, index: usize) -> Dtype {
        if self.is_complex() && index > 0 {
            Dtype::Complex128
        } else {
            Dtype::Real64
        }
    }

    /// Closed-form `sum(fan_in * fan_out + fan_out)`, complex layers doubled.
    pub fn parameter_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| {
                let n = a * b + b;
                match self.layer_dtype(i) {
                    Dtype::Real64 => n,
                    Dtype::Complex128 => 2 * n,
                }
            })
            .sum()
    }

    /// FLOPs to evaluate one coordinate: 2 per real MAC, 8 per complex MAC,
    /// plus the charged activation cost.
    pub fn flops_per_sample(&self) -> u64 {
        let dims = self.layer_dims();
        let last = dims.len() - 1;
        dims.iter()
            .enumerate()
            .map(|(i, &(a, b))| {
                let macs = (a * b) as u64;
                let linear = match self.layer_dtype(i) {
                    Dtype::Real64 => 2 * macs,
                    Dtype::Complex128 => 8 * macs,
                };
                let act = if i == last {
                    self.output_activation
                } else {
                    self.activation
                };
                linear + b as u64 * act.flops_per_element()
            })
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct MlpModel {
    pub spec: MlpSpec,
    pub layers: Vec<LinearLayer>,
    pub seed: u64,
    caches: Vec<ActivationCache>,
}

impl MlpModel {
    /// Random initialization.
    ///
    /// Sine: first layer `U(-1/fan_in, 1/fan_in)`, later layers
    /// `U(-sqrt(6/fan_in)/omega, +sqrt(6/fan_in)/omega)`. Every other
    /// activation: `U(-sqrt(6/fan_in), +sqrt(6/fan_in))`, drawn independently
    /// for real and imaginary parts of complex weights. Biases start at zero.
    pub fn init(spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims()
            .iter()
            .enumerate()
            .map(|(i, &(fan_in, fan_out))| {
                let bound = init_bound(&spec.activation, i, fan_in);
                let dtype = spec.layer_dtype(i);
                let mut layer = LinearLayer::zeros(fan_in, fan_out, dtype);
                match &mut layer.weight {
                    Tensor2::Real(w) => w.mapv_inplace(|_| rng.uniform_range(-bound, bound)),
                    Tensor2::Complex(w) => w.mapv_inplace(|_| {
                        let re = rng.uniform_range(-bound, bound);
                        let im = rng.uniform_range(-bound, bound);
                        num_complex::Complex64::new(re, im)
                    }),
                }
                layer
            })
            .collect();
        Ok(MlpModel {
            spec,
            layers,
            seed: rng.seed(),
            caches: Vec::new(),
        })
    }

    /// Builds a model around existing layers (checkpoints, tests).
    pub fn from_layers(spec: MlpSpec, layers: Vec<LinearLayer>, seed: u64) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if dims.len() != layers.len() {
            return Err(Error::shape("MlpModel::from_layers", dims.len(), layers.len()));
        }
        for (i, (l, &(a, b))) in layers.iter().zip(&dims).enumerate() {
            if (l.fan_in(), l.fan_out()) != (a, b) || l.dtype() != spec.layer_dtype(i) {
                return Err(Error::shape(
                    "MlpModel::from_layers",
                    format!("layer {i}: {a}x{b} {:?}", spec.layer_dtype(i)),
                    format!("{}x{} {:?}", l.fan_in(), l.fan_out(), l.dtype()),
                ));
            }
        }
        Ok(MlpModel {
            spec,
            layers,
            seed,
            caches: Vec::new(),
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(LinearLayer::parameter_count).sum()
    }

    pub fn flops_per_sample(&self) -> u64 {
        self.spec.flops_per_sample()
    }

    fn activation_for(&self, index: usize) -> Activation {
        if index + 1 == self.layers.len() {
            self.spec.output_activation
        } else {
            self.spec.activation
        }
    }

    fn check_input(&self, input: &Tensor2) -> Result<()> {
        if input.cols() != self.spec.in_dim {
            return Err(Error::shape("mlp_forward", self.spec.in_dim, input.cols()));
        }
        if input.dtype() != Dtype::Real64 {
            return Err(Error::dtype("mlp_forward", "MLP inputs must be real"));
        }
        Ok(())
    }

    /// Inference-only forward pass.
    pub fn predict(&self, input: &Tensor2) -> Result<Tensor2> {
        self.check_input(input)?;
        let mut h = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.predict(&h)?;
            h = self.activation_for(i).apply(&z)?;
        }
        Ok(real_output(h))
    }

    /// [`predict`](Self::predict) in row blocks of [`PREDICT_CHUNK`].
    pub fn predict_chunked(&self, input: &Tensor2) -> Result<Tensor2> {
        if input.rows() <= PREDICT_CHUNK {
            return self.predict(input);
        }
        let parts = (0..input.rows())
            .step_by(PREDICT_CHUNK)
            .map(|s| self.predict(&input.slice_rows(s, (s + PREDICT_CHUNK).min(input.rows()))))
            .collect::<Result<Vec<_>>>()?;
        Tensor2::vstack(&parts)
    }

    /// Training forward pass; caches what [`backward`](Self::backward) needs.
    pub fn forward(&mut self, input: Tensor2) -> Result<Tensor2> {
        self.check_input(&input)?;
        self.caches.clear();
        let mut h = input;
        for i in 0..self.layers.len() {
            let z = self.layers[i].forward(h)?;
            let (a, cache) = self.activation_for(i).apply_train(z)?;
            h = a;
            self.caches.push(cache);
        }
        Ok(real_output(h))
    }

    /// Accumulates gradients for a real cotangent of the output and returns
    /// the cotangent of the input.
    pub fn backward(&mut self, grad_out: &Tensor2) -> Result<Tensor2> {
        if self.caches.len() != self.layers.len() {
            return Err(Error::state("mlp_backward", "backward called without a preceding forward"));
        }
        if grad_out.cols() != self.spec.out_dim {
            return Err(Error::shape("mlp_backward", self.spec.out_dim, grad_out.cols()));
        }
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            let cache = self.caches.pop().expect("one cache per layer");
            g = self.activation_for(i).backward_cached(&cache, &g)?;
            g = self.layers[i].backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(LinearLayer::zero_grad);
    }

    pub fn params_and_grads(&mut self) -> Vec<(&mut Tensor2, &mut Tensor2)> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_and_grads())
            .collect()
    }

    /// All parameters as real scalars: per layer, weight (row-major, complex
    /// entries as `re, im`) then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            flatten_into(&l.weight, &mut out);
            flatten_into(&l.bias, &mut out);
        }
        out
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            flatten_into(&l.grad_weight, &mut out);
            flatten_into(&l.grad_bias, &mut out);
        }
        out
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::shape("set_flat_params", self.parameter_count(), values.len()));
        }
        let mut rest = values;
        for l in &mut self.layers {
            rest = unflatten_from(&mut l.weight, rest);
            rest = unflatten_from(&mut l.bias, rest);
        }
        Ok(())
    }
}

fn init_bound(activation: &Activation, layer_index: usize, fan_in: usize) -> f64 {
    let fan_in = fan_in as f64;
    match activation {
        Activation::Sine { omega } => {
            if layer_index == 0 {
                1.0 / fan_in
            } else {
                (6.0 / fan_in).sqrt() / omega
            }
        }
        _ => (6.0 / fan_in).sqrt(),
    }
}

fn real_output(h: Tensor2) -> Tensor2 {
    match h {
        Tensor2::Complex(_) => Tensor2::Real(h.real_part()),
        real => real,
    }
}

pub(crate) fn flatten_into(t: &Tensor2, out: &mut Vec<f64>) {
    match t {
        Tensor2::Real(a) => out.extend(a.iter().copied()),
        Tensor2::Complex(a) => out.extend(a.iter().flat_map(|c| [c.re, c.im])),
    }
}

pub(crate) fn unflatten_from<'a>(t: &mut Tensor2, values: &'a [f64]) -> &'a [f64] {
    let n = t.scalar_count();
    let (head, rest) = values.split_at(n);
    match t {
        Tensor2::Real(a) => a.iter_mut().zip(head).for_each(|(p, &v)| *p = v),
        Tensor2::Complex(a) => a.iter_mut().zip(head.chunks_exact(2)).for_each(|(p, v)| {
            p.re = v[0];
            p.im = v[1];
        }),
    }
    rest
}
