//! Iterative implicit neural representations.
//!
//! A coordinate MLP backbone (SIREN, Gauss or WIRE) is wrapped with a small
//! FeedbackNet and FuseNet and trained to recover the signal from an
//! interpolation between it and a fixed latent field. Reconstruction then
//! walks from the latent back to the signal in a few cheap steps that reuse
//! a single backbone pass.

pub mod activation;
pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod harness;
pub mod iinr;
pub mod imageio;
pub mod layer;
pub mod metrics;
pub mod mlp;
pub mod record;
pub mod rng;
pub mod tasks;
pub mod tensor;

pub use activation::Activation;
pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use iinr::{IinrModel, IinrSpec, TrainConfig};
pub use imageio::ImageBuffer;
pub use metrics::MetricReport;
pub use mlp::{MlpModel, MlpSpec};
pub use record::RunRecord;
pub use rng::Rng;
pub use tasks::SignalTask;
pub use tensor::{Dtype, Tensor2};
