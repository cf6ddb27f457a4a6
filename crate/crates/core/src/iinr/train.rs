//! Training loops for the iterative model and the single-shot baseline,
//! plus the evaluation helpers both share.
//!
//! Each iteration of the iterative loop draws `t ~ U(0, 1)` and
//! `n ~ N(0, I)`, builds the noisy state around the model's fixed latent
//! and takes one Adam step on the mean squared error against the target.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::iinr::model::IinrModel;
use crate::iinr::process::make_training_state;
use crate::iinr::reconstruct::reconstruct;
use crate::metrics::{self, MetricReport, SSIM_WINDOW};
use crate::mlp::{MlpModel, PREDICT_CHUNK};
use crate::record::{CheckpointMetrics, FlopsReport, RunRecord, StepsReport};
use crate::rng::Rng;
use crate::tasks::{SignalTask, TaskKind};
use crate::tensor::Tensor2;

/// Coordinate count above which training switches to random mini-batches.
pub const FULL_BATCH_LIMIT: usize = 1 << 16;
pub const OCCUPANCY_THRESHOLD: f64 = 0.5;

/// Stream of the seed's RNG used for training-time sampling.
const TRAIN_STREAM: u64 = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: f64,
    /// Learning rate reached at the last iteration (cosine decay).
    pub lr_final: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Checkpoint interval; 0 logs only the final iteration.
    pub eval_every: usize,
    /// Evaluate checkpoints single-threaded.
    pub deterministic: bool,
    /// Reconstruction steps used at checkpoints.
    pub eval_steps: usize,
    pub batch_limit: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            lr: 1e-3,
            lr_final: 1e-4,
            epsilon: 0.1,
            seed: 0,
            eval_every: 500,
            deterministic: true,
            eval_steps: 2,
            batch_limit: FULL_BATCH_LIMIT,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.lr > 0.0 && self.lr_final > 0.0) {
            return Err(Error::Config("learning rates must be > 0".into()));
        }
        if self.eval_steps == 0 || self.batch_limit == 0 {
            return Err(Error::Config("eval_steps and batch_limit must be >= 1".into()));
        }
        Ok(())
    }

    /// Cosine decay from `lr` at iteration 0 to `lr_final` at the last one.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        if self.iterations <= 1 {
            return self.lr;
        }
        let p = iteration as f64 / (self.iterations - 1) as f64;
        self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + (std::f64::consts::PI * p).cos())
    }

    fn is_checkpoint(&self, iteration: usize) -> bool {
        iteration == self.iterations || (self.eval_every > 0 && iteration.is_multiple_of(self.eval_every))
    }
}

/// Mean squared error and its gradient `2 (out - target) / (N * C)`.
pub fn mse_loss(out: &Tensor2, target: &Tensor2) -> Result<(f64, Tensor2)> {
    let (o, y) = (out.real()?, target.real()?);
    crate::tensor::check_same_shape("mse_loss", o, y)?;
    let n = o.len() as f64;
    let diff = o - y;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, Tensor2::Real(diff * (2.0 / n))))
}

/// The model's latent field at `coords`; grid tasks use the exact grid.
pub fn latent_at(model: &IinrModel, coords: &Tensor2, grid: Option<&[usize]>) -> Result<Tensor2> {
    match grid {
        Some(dims) => model.latent.sample_grid(dims),
        None => model.latent.sample_at(coords),
    }
}

fn chunk_starts(rows: usize) -> Vec<usize> {
    (0..rows.max(1)).step_by(PREDICT_CHUNK).collect()
}

/// Iterative reconstruction over the task's evaluation grid.
pub fn predict_iinr(model: &IinrModel, task: &SignalTask, steps: usize, parallel: bool) -> Result<Tensor2> {
    let coords = &task.eval_coords;
    let init = latent_at(model, coords, Some(&task.eval_grid))?;
    if coords.rows() <= PREDICT_CHUNK {
        return reconstruct(model, coords, &init, steps);
    }
    let run = |s: usize| {
        let e = (s + PREDICT_CHUNK).min(coords.rows());
        reconstruct(model, &coords.slice_rows(s, e), &init.slice_rows(s, e), steps)
    };
    let starts = chunk_starts(coords.rows());
    let parts: Vec<Tensor2> = if parallel {
        starts.par_iter().map(|&s| run(s)).collect::<Result<_>>()?
    } else {
        starts.iter().map(|&s| run(s)).collect::<Result<_>>()?
    };
    Tensor2::vstack(&parts)
}

/// Single-shot prediction over the task's evaluation grid.
pub fn predict_baseline(model: &MlpModel, task: &SignalTask, parallel: bool) -> Result<Tensor2> {
    let coords = &task.eval_coords;
    if !parallel || coords.rows() <= PREDICT_CHUNK {
        return model.predict_chunked(coords);
    }
    let parts: Vec<Tensor2> = chunk_starts(coords.rows())
        .par_iter()
        .map(|&s| model.predict(&coords.slice_rows(s, (s + PREDICT_CHUNK).min(coords.rows()))))
        .collect::<Result<_>>()?;
    Tensor2::vstack(&parts)
}

/// Task metrics of a prediction on the evaluation grid: PSNR and SSIM for
/// images (SSIM when both sides are at least the window size), PSNR of the
/// raw field and IoU at 0.5 for occupancy.
pub fn evaluate(pred: &Tensor2, task: &SignalTask) -> Result<MetricReport> {
    let mse = metrics::mse(pred, &task.eval_target)?;
    let mut report = MetricReport {
        psnr: metrics::psnr_from_mse(mse),
        mse,
        ssim: None,
        iou: None,
    };
    if task.kind == TaskKind::Occupancy {
        report.iou = Some(metrics::iou(pred, &task.eval_target, OCCUPANCY_THRESHOLD)?);
    } else if task.is_image() && task.eval_grid.iter().all(|&d| d >= SSIM_WINDOW) {
        let (h, w) = (task.eval_grid[0], task.eval_grid[1]);
        report.ssim = Some(metrics::ssim(pred, &task.eval_target, h, w)?);
    }
    Ok(report)
}

fn check_task(task: &SignalTask, coord_dim: usize, channels: usize) -> Result<()> {
    if task.coord_dim != coord_dim || task.channels != channels {
        return Err(Error::Config(format!(
            "model maps {coord_dim} -> {channels}, task is {} -> {}",
            task.coord_dim, task.channels
        )));
    }
    task.train_target.ensure_shape("train", task.train_coords.rows(), channels)
}

/// Training batch for one iteration: everything, or a random subset.
struct Batch {
    coords: Tensor2,
    target: Tensor2,
    latent: Option<Tensor2>,
}

fn draw_batch(
    task: &SignalTask,
    latent: Option<&Tensor2>,
    limit: usize,
    rng: &mut Rng,
) -> Option<Batch> {
    let rows = task.train_coords.rows();
    if rows <= limit {
        return None;
    }
    let idx = rng.sample_indices(rows, limit);
    Some(Batch {
        coords: task.train_coords.select_rows(&idx),
        target: task.train_target.select_rows(&idx),
        latent: latent.map(|z| z.select_rows(&idx)),
    })
}

fn checkpoint(iteration: usize, loss: f64, report: &MetricReport) -> CheckpointMetrics {
    CheckpointMetrics {
        iteration,
        loss,
        psnr: report.psnr,
        ssim: report.ssim,
        iou: report.iou,
    }
}

fn fail(record: &mut RunRecord, iteration: usize, loss: f64) {
    record.failed = true;
    record.failure = Some(Error::Diverged { iteration, loss }.to_string());
}

/// Trains an iterative model in place. Divergence ends the run early with
/// `failed` set; the partial record is still returned.
pub fn train(model: &mut IinrModel, task: &SignalTask, cfg: &TrainConfig) -> Result<RunRecord> {
    cfg.validate()?;
    check_task(task, model.spec.coord_dim, model.spec.channels)?;
    let start = Instant::now();
    let mut record = RunRecord::new("iinr", true, cfg.seed);
    record.parameter_count = model.parameter_count();
    record.added_parameter_count = model.spec.added_parameter_count();
    record.flops = FlopsReport {
        backbone: model.backbone.flops_per_sample(),
        per_step: model.spec.step_flops_per_sample(),
    };

    let z = latent_at(model, &task.train_coords, task.train_grid.as_deref())?;
    let mut rng = Rng::new(cfg.seed).fork(TRAIN_STREAM);
    let mut adam = AdamState::new(cfg.lr);
    model.zero_grad();
    for it in 1..=cfg.iterations {
        let batch = draw_batch(task, Some(&z), cfg.batch_limit, &mut rng);
        let (coords, target, z) = match &batch {
            Some(b) => (&b.coords, &b.target, b.latent.as_ref().expect("latent selected")),
            None => (&task.train_coords, &task.train_target, &z),
        };
        let t = rng.uniform();
        let n = rng.gaussian(coords.rows(), model.spec.channels);
        let state = make_training_state(target, z, t, &n, cfg.epsilon)?;
        let out = model.forward_train(coords, &state, t)?;
        let (loss, grad) = mse_loss(&out, target)?;
        if !loss.is_finite() {
            fail(&mut record, it, loss);
            break;
        }
        model.backward(&grad)?;
        adam.lr = cfg.lr_at(it - 1);
        adam.step(model.params_and_grads())?;
        if cfg.is_checkpoint(it) {
            let pred = predict_iinr(model, task, cfg.eval_steps, !cfg.deterministic)?;
            record.checkpoints.push(checkpoint(it, loss, &evaluate(&pred, task)?));
        }
    }
    model.counters.reset();
    record.wall_time_s = start.elapsed().as_secs_f64();
    Ok(record)
}

/// Plain single-shot fit of a backbone with MSE.
pub fn train_baseline(model: &mut MlpModel, task: &SignalTask, cfg: &TrainConfig) -> Result<RunRecord> {
    cfg.validate()?;
    check_task(task, model.spec.in_dim, model.spec.out_dim)?;
    let start = Instant::now();
    let mut record = RunRecord::new("baseline", false, cfg.seed);
    record.parameter_count = model.parameter_count();
    record.flops = FlopsReport {
        backbone: model.flops_per_sample(),
        per_step: 0,
    };

    let mut rng = Rng::new(cfg.seed).fork(TRAIN_STREAM);
    let mut adam = AdamState::new(cfg.lr);
    model.zero_grad();
    for it in 1..=cfg.iterations {
        let batch = draw_batch(task, None, cfg.batch_limit, &mut rng);
        let (coords, target) = match &batch {
            Some(b) => (&b.coords, &b.target),
            None => (&task.train_coords, &task.train_target),
        };
        let out = model.forward(coords.clone())?;
        let (loss, grad) = mse_loss(&out, target)?;
        if !loss.is_finite() {
            fail(&mut record, it, loss);
            break;
        }
        model.backward(&grad)?;
        adam.lr = cfg.lr_at(it - 1);
        adam.step(model.params_and_grads())?;
        if cfg.is_checkpoint(it) {
            let pred = predict_baseline(model, task, !cfg.deterministic)?;
            record.checkpoints.push(checkpoint(it, loss, &evaluate(&pred, task)?));
        }
    }
    record.wall_time_s = start.elapsed().as_secs_f64();
    Ok(record)
}

/// Appends final reports for each steps value.
pub fn finalize_iinr(
    record: &mut RunRecord,
    model: &IinrModel,
    task: &SignalTask,
    steps_list: &[usize],
    parallel: bool,
) -> Result<()> {
    for &steps in steps_list {
        let pred = predict_iinr(model, task, steps, parallel)?;
        record.finals.push(StepsReport {
            steps,
            report: evaluate(&pred, task)?,
        });
    }
    Ok(())
}

pub fn finalize_baseline(record: &mut RunRecord, model: &MlpModel, task: &SignalTask, parallel: bool) -> Result<()> {
    let pred = predict_baseline(model, task, parallel)?;
    record.finals.push(StepsReport {
        steps: 1,
        report: evaluate(&pred, task)?,
    });
    Ok(())
}
