//! Backbone + FeedbackNet + FuseNet.
//!
//! ```text
//! b  = Backbone(x)
//! f  = FeedbackNet(concat(state, x, t))
//! zf = FuseNet(concat(f, b))
//! out = zf * b                  (multiplicative)
//!     = b * t + zf * (1 - t)    (adaptive)
//! ```

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iinr::latent::{LatentField, LatentMode};
use crate::mlp::{MlpModel, MlpSpec};
use crate::rng::Rng;
use crate::tensor::Tensor2;

pub const FEEDBACK_WIDTH: usize = 30;
pub const FUSE_WIDTH: usize = 100;
pub const DEFAULT_EPSILON: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    #[default]
    Multiplicative,
    Adaptive,
}

impl std::str::FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiplicative" | "mul" => Ok(Fusion::Multiplicative),
            "adaptive" => Ok(Fusion::Adaptive),
            other => Err(Error::Config(format!("unknown fusion mode '{other}'"))),
        }
    }
}

/// Everything needed to build an [`IinrModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IinrSpec {
    pub coord_dim: usize,
    pub channels: usize,
    pub backbone: MlpSpec,
    pub feedback_width: usize,
    pub feedback_hidden_layers: usize,
    pub fuse_width: usize,
    pub fuse_hidden_layers: usize,
    pub fusion: Fusion,
    pub epsilon: f64,
    pub latent_mode: LatentMode,
    pub latent_resolution: Vec<usize>,
    #[serde(default = "yes")]
    pub feedback_enabled: bool,
    #[serde(default = "yes")]
    pub fuse_enabled: bool,
}

fn yes() -> bool {
    true
}

impl IinrSpec {
    /// Default FeedbackNet/FuseNet sizing around a backbone: two linear
    /// layers each, widths 30 and 100, same activation as the backbone.
    pub fn around(backbone: MlpSpec, latent_resolution: Vec<usize>) -> Self {
        IinrSpec {
            coord_dim: backbone.in_dim,
            channels: backbone.out_dim,
            backbone,
            feedback_width: FEEDBACK_WIDTH,
            feedback_hidden_layers: 0,
            fuse_width: FUSE_WIDTH,
            fuse_hidden_layers: 0,
            fusion: Fusion::Multiplicative,
            epsilon: DEFAULT_EPSILON,
            latent_mode: LatentMode::GaussianNoise,
            latent_resolution,
            feedback_enabled: true,
            fuse_enabled: true,
        }
    }

    /// Output width of FeedbackNet (equal to its own hidden width).
    pub fn feedback_dim(&self) -> usize {
        self.feedback_width
    }

    pub fn feedback_spec(&self) -> MlpSpec {
        MlpSpec::new(
            self.channels + self.coord_dim + 1,
            self.feedback_dim(),
            self.feedback_width,
            self.feedback_hidden_layers,
            self.backbone.activation,
        )
    }

    pub fn fuse_spec(&self) -> MlpSpec {
        MlpSpec::new(
            self.feedback_dim() + self.channels,
            self.channels,
            self.fuse_width,
            self.fuse_hidden_layers,
            self.backbone.activation,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone.in_dim != self.coord_dim || self.backbone.out_dim != self.channels {
            return Err(Error::Config(format!(
                "backbone maps {} -> {}, task needs {} -> {}",
                self.backbone.in_dim, self.backbone.out_dim, self.coord_dim, self.channels
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.latent_resolution.len() != self.coord_dim {
            return Err(Error::Config(format!(
                "latent grid {:?} does not match {}-d coordinates",
                self.latent_resolution, self.coord_dim
            )));
        }
        self.backbone.validate()
    }

    /// Parameters added on top of the backbone by the enabled modules.
    pub fn added_parameter_count(&self) -> usize {
        let mut n = 0;
        if self.fuse_enabled {
            n += self.fuse_spec().parameter_count();
            if self.feedback_enabled {
                n += self.feedback_spec().parameter_count();
            }
        }
        n
    }

    /// FLOPs per coordinate of one refinement step after the backbone pass:
    /// FeedbackNet, FuseNet, the fusion rule, and the state update.
    pub fn step_flops_per_sample(&self) -> u64 {
        let c = self.channels as u64;
        let mut flops = 3 * c; // state update: w * out + (1 - w) * state
        if self.fuse_enabled {
            flops += self.fuse_spec().flops_per_sample();
            flops += match self.fusion {
                Fusion::Multiplicative => c,
                Fusion::Adaptive => 3 * c,
            };
            if self.feedback_enabled {
                flops += self.feedback_spec().flops_per_sample();
            }
        }
        flops
    }
}

/// Instrumentation for inference passes.
#[derive(Debug, Default)]
pub struct EvalCounters {
    backbone_passes: AtomicU64,
    backbone_flops: AtomicU64,
    step_flops: AtomicU64,
}

impl Clone for EvalCounters {
    fn clone(&self) -> Self {
        let c = EvalCounters::default();
        c.backbone_passes.store(self.backbone_passes(), Ordering::Relaxed);
        c.backbone_flops.store(self.backbone_flops(), Ordering::Relaxed);
        c.step_flops.store(self.step_flops(), Ordering::Relaxed);
        c
    }
}

impl EvalCounters {
    pub fn backbone_passes(&self) -> u64 {
        self.backbone_passes.load(Ordering::Relaxed)
    }

    pub fn backbone_flops(&self) -> u64 {
        self.backbone_flops.load(Ordering::Relaxed)
    }

    pub fn step_flops(&self) -> u64 {
        self.step_flops.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.backbone_passes.store(0, Ordering::Relaxed);
        self.backbone_flops.store(0, Ordering::Relaxed);
        self.step_flops.store(0, Ordering::Relaxed);
    }
}

#[derive(Clone, Debug)]
struct ForwardCache {
    b: Tensor2,
    zf: Tensor2,
    t: f64,
}

#[derive(Clone, Debug)]
pub struct IinrModel {
    pub spec: IinrSpec,
    pub backbone: MlpModel,
    pub feedback: MlpModel,
    pub fuse: MlpModel,
    pub latent: LatentField,
    pub counters: EvalCounters,
    cache: Option<ForwardCache>,
}

impl IinrModel {
    pub fn init(spec: IinrSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let root = Rng::new(seed);
        let backbone = MlpModel::init(spec.backbone.clone(), &mut root.fork(0))?;
        let feedback = MlpModel::init(spec.feedback_spec(), &mut root.fork(1))?;
        let fuse = MlpModel::init(spec.fuse_spec(), &mut root.fork(2))?;
        let latent = LatentField::new(
            spec.latent_mode,
            seed.wrapping_add(0x5EED),
            spec.latent_resolution.clone(),
            spec.channels,
        )?;
        Ok(IinrModel {
            spec,
            backbone,
            feedback,
            fuse,
            latent,
            counters: EvalCounters::default(),
            cache: None,
        })
    }

    /// Assembles a model from existing parts (checkpoint loading, tests).
    pub fn from_parts(
        spec: IinrSpec,
        backbone: MlpModel,
        feedback: MlpModel,
        fuse: MlpModel,
        latent: LatentField,
    ) -> Result<Self> {
        spec.validate()?;
        if backbone.spec != spec.backbone
            || feedback.spec != spec.feedback_spec()
            || fuse.spec != spec.fuse_spec()
        {
            return Err(Error::Config("module specs disagree with the I-INR spec".into()));
        }
        Ok(IinrModel {
            spec,
            backbone,
            feedback,
            fuse,
            latent,
            counters: EvalCounters::default(),
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.spec.channels
    }

    pub fn parameter_count(&self) -> usize {
        self.backbone.parameter_count() + self.spec.added_parameter_count()
    }

    fn feedback_input(&self, coords: &Tensor2, state: &Tensor2, t: f64) -> Result<Tensor2> {
        let tcol = Tensor2::filled(coords.rows(), 1, t);
        Tensor2::hstack(&[state, coords, &tcol])
    }

    fn check_inputs(&self, coords: &Tensor2, state: &Tensor2, t: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::domain("model_forward", format!("t must lie in [0, 1], got {t}")));
        }
        if coords.cols() != self.spec.coord_dim {
            return Err(Error::shape("model_forward", self.spec.coord_dim, coords.cols()));
        }
        state.ensure_shape("model_forward", coords.rows(), self.spec.channels)
    }

    /// Backbone features for `coords`; counted as one backbone pass.
    pub fn backbone_features(&self, coords: &Tensor2) -> Result<Tensor2> {
        let b = self.backbone.predict(coords)?;
        self.counters.backbone_passes.fetch_add(1, Ordering::Relaxed);
        self.counters.backbone_flops.fetch_add(
            self.backbone.flops_per_sample() * coords.rows() as u64,
            Ordering::Relaxed,
        );
        Ok(b)
    }

    /// `f_theta(state, x, t)` given precomputed backbone features.
    pub fn refine(&self, coords: &Tensor2, b: &Tensor2, state: &Tensor2, t: f64) -> Result<Tensor2> {
        self.check_inputs(coords, state, t)?;
        b.ensure_shape("model_forward", coords.rows(), self.spec.channels)?;
        self.counters.step_flops.fetch_add(
            (self.spec.step_flops_per_sample() - 3 * self.spec.channels as u64) * coords.rows() as u64,
            Ordering::Relaxed,
        );
        if !self.spec.fuse_enabled {
            return Ok(b.clone());
        }
        let f = if self.spec.feedback_enabled {
            self.feedback.predict(&self.feedback_input(coords, state, t)?)?
        } else {
            Tensor2::filled(coords.rows(), self.spec.feedback_dim(), 0.0)
        };
        let zf = self.fuse.predict(&Tensor2::hstack(&[&f, b])?)?;
        fuse_outputs(self.spec.fusion, b, &zf, t)
    }

    /// Full `f_theta(state, x, t)`, backbone included.
    pub fn forward(&self, coords: &Tensor2, state: &Tensor2, t: f64) -> Result<Tensor2> {
        let b = self.backbone_features(coords)?;
        self.refine(coords, &b, state, t)
    }

    /// Training forward pass; caches activations for [`backward`](Self::backward).
    pub fn forward_train(&mut self, coords: &Tensor2, state: &Tensor2, t: f64) -> Result<Tensor2> {
        self.check_inputs(coords, state, t)?;
        let b = self.backbone.forward(coords.clone())?;
        if !self.spec.fuse_enabled {
            self.cache = Some(ForwardCache {
                zf: Tensor2::filled(0, 0, 0.0),
                b: Tensor2::filled(0, 0, 0.0),
                t,
            });
            return Ok(b);
        }
        let f = if self.spec.feedback_enabled {
            let input = self.feedback_input(coords, state, t)?;
            self.feedback.forward(input)?
        } else {
            Tensor2::filled(coords.rows(), self.spec.feedback_dim(), 0.0)
        };
        let zf = self.fuse.forward(Tensor2::hstack(&[&f, &b])?)?;
        let out = fuse_outputs(self.spec.fusion, &b, &zf, t)?;
        self.cache = Some(ForwardCache { b, zf, t });
        Ok(out)
    }

    /// Accumulates gradients of all enabled modules for the output cotangent.
    pub fn backward(&mut self, grad_out: &Tensor2) -> Result<()> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::state("model_backward", "backward called without forward_train"))?;
        if !self.spec.fuse_enabled {
            self.backbone.backward(grad_out)?;
            return Ok(());
        }
        let g = grad_out.real()?;
        let (b, zf) = (cache.b.real()?, cache.zf.real()?);
        let (mut g_b, g_zf) = match self.spec.fusion {
            Fusion::Multiplicative => (g * zf, g * b),
            Fusion::Adaptive => (g * cache.t, g * (1.0 - cache.t)),
        };
        let g_in = self.fuse.backward(&Tensor2::Real(g_zf))?;
        let (g_f, g_b2) = g_in.split_cols(self.spec.feedback_dim())?;
        g_b += g_b2.real()?;
        if self.spec.feedback_enabled {
            self.feedback.backward(&g_f)?;
        }
        self.backbone.backward(&Tensor2::Real(g_b))?;
        Ok(())
    }

    /// Trainable `(parameter, gradient)` pairs of the enabled modules.
    pub fn params_and_grads(&mut self) -> Vec<(&mut Tensor2, &mut Tensor2)> {
        let mut pairs = self.backbone.params_and_grads();
        if self.spec.fuse_enabled {
            if self.spec.feedback_enabled {
                pairs.extend(self.feedback.params_and_grads());
            }
            pairs.extend(self.fuse.params_and_grads());
        }
        pairs
    }

    pub fn zero_grad(&mut self) {
        self.backbone.zero_grad();
        self.feedback.zero_grad();
        self.fuse.zero_grad();
    }
}

/// Combines backbone output `b` and FuseNet output `zf`.
pub fn fuse_outputs(fusion: Fusion, b: &Tensor2, zf: &Tensor2, t: f64) -> Result<Tensor2> {
    let (b, zf) = (b.real()?, zf.real()?);
    crate::tensor::check_same_shape("fuse_outputs", b, zf)?;
    let mut out = b.clone();
    match fusion {
        Fusion::Multiplicative => {
            Zip::from(&mut out).and(zf).for_each(|o, &z| *o *= z);
        }
        Fusion::Adaptive => {
            if t == 1.0 {
                return Ok(Tensor2::Real(out));
            }
            if t == 0.0 {
                return Ok(Tensor2::Real(zf.clone()));
            }
            Zip::from(&mut out)
                .and(zf)
                .for_each(|o, &z| *o = *o * t + z * (1.0 - t));
        }
    }
    Ok(Tensor2::Real(out))
}
