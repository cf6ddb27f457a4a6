//! The iterative INR: degradation process, model, training and
//! reconstruction.

pub mod latent;
pub mod model;
pub mod process;
pub mod reconstruct;
pub mod train;

pub use latent::{LatentField, LatentMode};
pub use model::{fuse_outputs, EvalCounters, Fusion, IinrModel, IinrSpec};
pub use process::{degrade, make_training_state};
pub use reconstruct::{reconstruct, reconstruct_chunked, Refiner};
pub use train::{evaluate, train, train_baseline, TrainConfig};
