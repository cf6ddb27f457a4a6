//! Experiment configuration, orchestration, sweeps and reporting.
//!
//! A run directory holds `record.json`, `metrics.csv`, `recon.<ext>`,
//! `residual.<ext>` and `checkpoint.bin`. Residual maps store
//! `|clamp(pred, 0, 1) - gt|` quantized like any other image
//! (`round_half_up(255 * v)`). Occupancy runs write the middle `z` slice
//! of the field as the image outputs plus the thresholded grid as
//! `recon.vox`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::iinr::latent::LatentMode;
use crate::iinr::model::{Fusion, IinrModel, IinrSpec};
use crate::iinr::train::{
    finalize_baseline, finalize_iinr, predict_baseline, predict_iinr, train, train_baseline,
    TrainConfig, OCCUPANCY_THRESHOLD,
};
use crate::imageio::{read_image, write_image, ImageBuffer};
use crate::mlp::{MlpModel, MlpSpec};
use crate::record::{write_metrics_csv, RunRecord};
use crate::rng::Rng;
use crate::tasks::{
    image_from_tensor, make_denoise_task, make_fit_task, make_occupancy_task, make_sr_task,
    OccupancyShape, SignalTask, VoxelGrid,
};
use crate::tensor::Tensor2;

pub const ENV_OUT_DIR: &str = "IINR_OUT_DIR";
pub const ENV_THREADS: &str = "IINR_THREADS";

/// RNG streams derived from a run seed.
const NOISE_STREAM: u64 = 20;
const OCCUPANCY_STREAM: u64 = 21;
/// Stream of the I-INR seed that initializes its backbone; the baseline
/// uses the same one so both start from identical backbone weights.
const BACKBONE_STREAM: u64 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskName {
    Fit,
    Sr,
    Denoise,
    Occupancy,
}

impl std::str::FromStr for TaskName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fit" => Ok(TaskName::Fit),
            "sr" => Ok(TaskName::Sr),
            "denoise" => Ok(TaskName::Denoise),
            "occupancy" => Ok(TaskName::Occupancy),
            other => Err(Error::Config(format!("unknown task '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Siren,
    Wire,
    Gauss,
    Relu,
}

impl BackboneKind {
    pub fn name(&self) -> &'static str {
        match self {
            BackboneKind::Siren => "siren",
            BackboneKind::Wire => "wire",
            BackboneKind::Gauss => "gauss",
            BackboneKind::Relu => "relu",
        }
    }
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "siren" => Ok(BackboneKind::Siren),
            "wire" => Ok(BackboneKind::Wire),
            "gauss" => Ok(BackboneKind::Gauss),
            "relu" => Ok(BackboneKind::Relu),
            other => Err(Error::Config(format!("unknown backbone '{other}'"))),
        }
    }
}

/// Per-task `(omega, sigma)` defaults for each backbone.
pub fn default_hyperparameters(task: TaskName, backbone: BackboneKind) -> (Option<f64>, Option<f64>) {
    use BackboneKind::*;
    use TaskName::*;
    match (task, backbone) {
        (Fit, Siren) => (Some(52.0), None),
        (Fit, Wire) => (Some(7.0), Some(13.0)),
        (Fit, Gauss) => (None, Some(18.0)),
        (Sr, Siren) => (Some(30.0), None),
        (Sr, Wire) => (Some(4.0), Some(10.0)),
        (Sr, Gauss) => (None, Some(11.0)),
        (Denoise, Siren) => (Some(55.0), None),
        (Denoise, Wire) => (Some(10.0), Some(16.0)),
        (Denoise, Gauss) => (None, Some(18.0)),
        (Occupancy, Siren) => (Some(55.0), None),
        (Occupancy, Wire) => (Some(10.0), Some(20.0)),
        (Occupancy, Gauss) => (None, Some(17.0)),
        (_, Relu) => (None, None),
    }
}

/// `(width, hidden_layers)` of the paper's backbone for a task.
pub fn default_architecture(task: TaskName) -> (usize, usize) {
    match task {
        TaskName::Fit => (300, 3),
        _ => (256, 2),
    }
}

pub fn default_iterations(task: TaskName) -> usize {
    match task {
        TaskName::Occupancy => 200,
        _ => 2000,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageFormat {
    Pnm,
    Png,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub task: TaskName,
    /// Input image for fit / sr / denoise.
    pub image: Option<PathBuf>,
    /// Center crop to a square of this size before building the task.
    pub crop: Option<usize>,
    pub scale: usize,
    pub max_photons: f64,
    pub readout: f64,
    pub shape: OccupancyShape,
    /// Voxel grid file; replaces `shape` when set.
    pub voxels: Option<PathBuf>,
    pub train_samples: usize,
    pub eval_grid: usize,

    pub backbone: BackboneKind,
    /// Defaults to the per-task table when absent.
    pub omega: Option<f64>,
    pub sigma: Option<f64>,
    pub width: Option<usize>,
    pub hidden_layers: Option<usize>,

    /// Train the single-shot baseline.
    pub baseline: bool,
    /// Train the iterative model.
    pub iterative: bool,
    pub steps: usize,
    pub epsilon: f64,
    pub fusion: Fusion,
    pub latent: LatentMode,
    pub feedback_enabled: bool,
    pub fuse_enabled: bool,
    pub feedback_width: usize,
    pub fuse_width: usize,

    pub lr: f64,
    pub lr_final: f64,
    pub iterations: Option<usize>,
    pub eval_every: usize,
    pub seeds: Vec<u64>,
    pub deterministic: bool,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
    pub image_format: ImageFormat,
    /// Skip writing per-run files (records are still returned).
    pub dry_run: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::for_task(TaskName::Fit)
    }
}

impl ExperimentConfig {
    pub fn for_task(task: TaskName) -> Self {
        ExperimentConfig {
            task,
            image: None,
            crop: None,
            scale: 2,
            max_photons: crate::tasks::DEFAULT_MAX_PHOTONS,
            readout: crate::tasks::DEFAULT_READOUT,
            shape: OccupancyShape::Sphere { radius: 0.5 },
            voxels: None,
            train_samples: 4096,
            eval_grid: 64,
            backbone: BackboneKind::Siren,
            omega: None,
            sigma: None,
            width: None,
            hidden_layers: None,
            baseline: true,
            iterative: true,
            steps: 2,
            epsilon: crate::iinr::model::DEFAULT_EPSILON,
            fusion: Fusion::Multiplicative,
            latent: LatentMode::GaussianNoise,
            feedback_enabled: true,
            fuse_enabled: true,
            feedback_width: crate::iinr::model::FEEDBACK_WIDTH,
            fuse_width: crate::iinr::model::FUSE_WIDTH,
            lr: 1e-3,
            lr_final: 1e-4,
            iterations: None,
            eval_every: 500,
            seeds: vec![0],
            deterministic: true,
            output_dir: PathBuf::from("runs"),
            threads: None,
            image_format: ImageFormat::Pnm,
            dry_run: false,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    /// Applies `IINR_OUT_DIR` and `IINR_THREADS` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(dir) = std::env::var(ENV_OUT_DIR) {
            self.output_dir = PathBuf::from(dir);
        }
        if let Ok(n) = std::env::var(ENV_THREADS) {
            let n = n
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_THREADS} must be a count, got '{n}'")))?;
            self.threads = Some(n);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if !self.baseline && !self.iterative {
            return Err(Error::Config("nothing to train: baseline and iterative both off".into()));
        }
        if self.task != TaskName::Occupancy && self.image.is_none() {
            return Err(Error::Config(format!("task {:?} needs an input image", self.task)));
        }
        self.activation()?.validate()?;
        self.train_config(0).validate()
    }

    pub fn activation(&self) -> Result<Activation> {
        let (omega0, sigma0) = default_hyperparameters(self.task, self.backbone);
        let omega = self.omega.or(omega0);
        let sigma = self.sigma.or(sigma0);
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Config(format!("{} backbone needs {name}", self.backbone.name())))
        };
        Ok(match self.backbone {
            BackboneKind::Siren => Activation::Sine { omega: need(omega, "omega")? },
            BackboneKind::Gauss => Activation::Gauss { sigma: need(sigma, "sigma")? },
            BackboneKind::Wire => Activation::GaborWavelet {
                omega: need(omega, "omega")?,
                sigma: need(sigma, "sigma")?,
            },
            BackboneKind::Relu => Activation::Relu,
        })
    }

    pub fn backbone_spec(&self, in_dim: usize, out_dim: usize) -> Result<MlpSpec> {
        let (w, h) = default_architecture(self.task);
        Ok(MlpSpec::new(
            in_dim,
            out_dim,
            self.width.unwrap_or(w),
            self.hidden_layers.unwrap_or(h),
            self.activation()?,
        ))
    }

    pub fn iinr_spec(&self, task: &SignalTask) -> Result<IinrSpec> {
        let mut spec = IinrSpec::around(
            self.backbone_spec(task.coord_dim, task.channels)?,
            task.latent_resolution(),
        );
        spec.fusion = self.fusion;
        spec.epsilon = self.epsilon;
        spec.latent_mode = self.latent;
        spec.feedback_enabled = self.feedback_enabled;
        spec.fuse_enabled = self.fuse_enabled;
        spec.feedback_width = self.feedback_width;
        spec.fuse_width = self.fuse_width;
        Ok(spec)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations.unwrap_or_else(|| default_iterations(self.task)),
            lr: self.lr,
            lr_final: self.lr_final,
            epsilon: self.epsilon,
            seed,
            eval_every: self.eval_every,
            deterministic: self.deterministic,
            eval_steps: self.steps,
            ..TrainConfig::default()
        }
    }

    fn load_image(&self) -> Result<ImageBuffer> {
        let path = self
            .image
            .as_ref()
            .ok_or_else(|| Error::Config("no input image".into()))?;
        let img = read_image(path)?;
        match self.crop {
            Some(n) => {
                let n = n.min(img.width).min(img.height);
                img.crop((img.width - n) / 2, (img.height - n) / 2, n, n)
            }
            None => Ok(img),
        }
    }

    /// Builds the task; seed-dependent for denoising noise and occupancy samples.
    pub fn build_task(&self, seed: u64) -> Result<SignalTask> {
        match self.task {
            TaskName::Fit => make_fit_task(&self.load_image()?),
            TaskName::Sr => make_sr_task(&self.load_image()?, self.scale),
            TaskName::Denoise => make_denoise_task(
                &self.load_image()?,
                &mut Rng::new(seed).fork(NOISE_STREAM),
                self.max_photons,
                self.readout,
            ),
            TaskName::Occupancy => {
                let shape = match &self.voxels {
                    Some(p) => OccupancyShape::VoxelGrid(VoxelGrid::read(p)?),
                    None => self.shape.clone(),
                };
                make_occupancy_task(
                    &shape,
                    self.train_samples,
                    self.eval_grid,
                    &mut Rng::new(seed).fork(OCCUPANCY_STREAM),
                )
            }
        }
    }

    /// `siren` for the baseline, `i-siren` for the iterative model.
    pub fn label(&self, iterative: bool) -> String {
        let base = self.backbone.name();
        if iterative {
            format!("i-{base}")
        } else {
            base.to_string()
        }
    }

    fn image_ext(&self) -> &'static str {
        match self.image_format {
            ImageFormat::Pnm => "pnm",
            ImageFormat::Png => "png",
        }
    }
}

/// A trained model of either kind.
#[derive(Clone, Debug)]
pub enum TrainedModel {
    Baseline(MlpModel),
    Iterative(IinrModel),
}

impl TrainedModel {
    pub fn predict(&self, task: &SignalTask, steps: usize, parallel: bool) -> Result<Tensor2> {
        match self {
            TrainedModel::Baseline(m) => predict_baseline(m, task, parallel),
            TrainedModel::Iterative(m) => predict_iinr(m, task, steps, parallel),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        match self {
            TrainedModel::Baseline(m) => Checkpoint::Mlp(m.clone()),
            TrainedModel::Iterative(m) => Checkpoint::Iinr(m.clone()),
        }
    }
}

/// One trained model, its record, and the task it was evaluated on.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub record: RunRecord,
    pub model: TrainedModel,
}

/// Trains and evaluates one model. `steps_list` applies to the iterative
/// model (the baseline is always evaluated once).
pub fn run_single(
    cfg: &ExperimentConfig,
    task: &SignalTask,
    seed: u64,
    iterative: bool,
    steps_list: &[usize],
) -> Result<RunOutput> {
    let tcfg = cfg.train_config(seed);
    let parallel = !cfg.deterministic;
    let (mut record, model) = if iterative {
        let mut model = IinrModel::init(cfg.iinr_spec(task)?, seed)?;
        let mut record = train(&mut model, task, &tcfg)?;
        if !record.failed {
            finalize_iinr(&mut record, &model, task, steps_list, parallel)?;
        }
        (record, TrainedModel::Iterative(model))
    } else {
        let spec = cfg.backbone_spec(task.coord_dim, task.channels)?;
        let mut model = MlpModel::init(spec, &mut Rng::new(seed).fork(BACKBONE_STREAM))?;
        let mut record = train_baseline(&mut model, task, &tcfg)?;
        if !record.failed {
            finalize_baseline(&mut record, &model, task, parallel)?;
        }
        (record, TrainedModel::Baseline(model))
    };
    record.label = cfg.label(iterative);
    record.config = serde_json::to_value(cfg)?;
    Ok(RunOutput { record, model })
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn run_dir(cfg: &ExperimentConfig, record: &RunRecord) -> PathBuf {
    cfg.output_dir
        .join(format!("{}-seed{}", sanitize(&record.label), record.seed))
}

fn residual(pred: &Tensor2, target: &Tensor2) -> Result<Tensor2> {
    let (p, t) = (pred.real()?, target.real()?);
    Ok(Tensor2::Real(
        ndarray::Zip::from(p)
            .and(t)
            .map_collect(|&p, &t| (p.clamp(0.0, 1.0) - t).abs()),
    ))
}

/// Row of point `(ix, iy, iz)` in a `grid_coords` lattice, where `x`
/// follows the fastest axis.
fn grid_row(dims: &[usize], ix: usize, iy: usize, iz: usize) -> usize {
    (iz * dims[1] + iy) * dims[0] + ix
}

/// Middle `z` slice of a 3-D grid field as a grayscale image (`x` across,
/// `y` down).
fn mid_slice(field: &Tensor2, dims: &[usize]) -> Result<ImageBuffer> {
    let v = field.real()?;
    let iz = dims[2] / 2;
    let mut data = Vec::with_capacity(dims[0] * dims[1]);
    for iy in 0..dims[1] {
        for ix in 0..dims[0] {
            data.push(v[[grid_row(dims, ix, iy, iz), 0]].clamp(0.0, 1.0));
        }
    }
    ImageBuffer::new(dims[0], dims[1], 1, data)
}

/// Thresholded field as a [`VoxelGrid`] (which stores `z` fastest).
fn field_to_voxels(field: &Tensor2, dims: &[usize]) -> Result<VoxelGrid> {
    let v = field.real()?;
    let mut bits = Vec::with_capacity(v.nrows());
    for ix in 0..dims[0] {
        for iy in 0..dims[1] {
            for iz in 0..dims[2] {
                bits.push(v[[grid_row(dims, ix, iy, iz), 0]] >= OCCUPANCY_THRESHOLD);
            }
        }
    }
    VoxelGrid::new([dims[0], dims[1], dims[2]], bits)
}

/// Writes the per-run artifacts into `dir`.
pub fn write_run_outputs(
    cfg: &ExperimentConfig,
    dir: &Path,
    out: &RunOutput,
    task: &SignalTask,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    out.record.write_json(dir.join("record.json"))?;
    write_metrics_csv(dir.join("metrics.csv"), std::slice::from_ref(&out.record))?;
    out.model.checkpoint().write(dir.join("checkpoint.bin"))?;
    if out.record.failed {
        return Ok(());
    }
    let steps = out.record.finals.first().map_or(cfg.steps, |f| f.steps);
    let pred = out.model.predict(task, steps, !cfg.deterministic)?;
    let res = residual(&pred, &task.eval_target)?;
    let ext = cfg.image_ext();
    if task.is_image() {
        let (h, w) = (task.eval_grid[0], task.eval_grid[1]);
        write_image(dir.join(format!("recon.{ext}")), &image_from_tensor(&pred, h, w)?)?;
        write_image(dir.join(format!("residual.{ext}")), &image_from_tensor(&res, h, w)?)?;
    } else {
        write_image(dir.join(format!("recon.{ext}")), &mid_slice(&pred, &task.eval_grid)?)?;
        write_image(dir.join(format!("residual.{ext}")), &mid_slice(&res, &task.eval_grid)?)?;
        let grid = field_to_voxels(&pred, &task.eval_grid)?;
        let path = dir.join("recon.vox");
        std::fs::write(&path, grid.to_bytes()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// A unit of work: one model on one seed under one configuration.
#[derive(Clone, Debug)]
struct Job {
    cfg: ExperimentConfig,
    seed: u64,
    iterative: bool,
    steps_list: Vec<usize>,
    /// Appended to the label, e.g. `latent=ones`.
    variant: Option<String>,
}

fn run_jobs(jobs: Vec<Job>, threads: Option<usize>) -> Result<Vec<RunRecord>> {
    let exec = |job: &Job| -> Result<RunRecord> {
        let task = job.cfg.build_task(job.seed)?;
        let mut out = run_single(&job.cfg, &task, job.seed, job.iterative, &job.steps_list)?;
        if let Some(v) = &job.variant {
            out.record.label = format!("{}[{v}]", out.record.label);
        }
        if !job.cfg.dry_run {
            let dir = run_dir(&job.cfg, &out.record);
            write_run_outputs(&job.cfg, &dir, &out, &task)?;
        }
        Ok(out.record)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    // collect preserves job order, so result files do not depend on scheduling
    pool.install(|| jobs.par_iter().map(exec).collect())
}

fn write_summary_files(cfg: &ExperimentConfig, records: &[RunRecord]) -> Result<()> {
    if cfg.dry_run {
        return Ok(());
    }
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("records.json");
    std::fs::write(&path, serde_json::to_string_pretty(records)?).map_err(|e| Error::io(path, e))?;
    write_metrics_csv(dir.join("metrics.csv"), records)?;
    report(records, dir)?;
    Ok(())
}

fn jobs_for(cfg: &ExperimentConfig, steps_list: &[usize], variant: Option<String>) -> Vec<Job> {
    let mut jobs = Vec::new();
    for &seed in &cfg.seeds {
        for (flag, iterative) in [(cfg.baseline, false), (cfg.iterative, true)] {
            if flag {
                jobs.push(Job {
                    cfg: cfg.clone(),
                    seed,
                    iterative,
                    steps_list: steps_list.to_vec(),
                    variant: variant.clone(),
                });
            }
        }
    }
    jobs
}

/// Trains the baseline and/or iterative model for every seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let records = run_jobs(jobs_for(cfg, &[cfg.steps], None), cfg.threads)?;
    write_summary_files(cfg, &records)?;
    Ok(records)
}

pub const DEFAULT_STEPS_LIST: [usize; 5] = [1, 2, 4, 8, 16];

/// Trains the iterative model once per seed and evaluates it at every
/// steps value. Also writes `steps.csv`.
pub fn sweep_steps(cfg: &ExperimentConfig, steps_list: &[usize]) -> Result<Vec<RunRecord>> {
    if steps_list.is_empty() || steps_list.contains(&0) {
        return Err(Error::Config("steps list must be nonempty with values >= 1".into()));
    }
    let mut cfg = cfg.clone();
    cfg.baseline = false;
    cfg.iterative = true;
    cfg.validate()?;
    let records = run_jobs(jobs_for(&cfg, steps_list, None), cfg.threads)?;
    write_summary_files(&cfg, &records)?;
    if !cfg.dry_run {
        write_steps_csv(cfg.output_dir.join("steps.csv"), &records)?;
    }
    Ok(records)
}

#[derive(Debug, Serialize)]
struct StepsRow<'a> {
    label: &'a str,
    seed: u64,
    steps: usize,
    psnr: f64,
    ssim: Option<f64>,
    iou: Option<f64>,
    parameter_count: usize,
}

pub fn write_steps_csv(path: impl AsRef<Path>, records: &[RunRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in records {
        for f in &r.finals {
            w.serialize(StepsRow {
                label: &r.label,
                seed: r.seed,
                steps: f.steps,
                psnr: f.report.psnr,
                ssim: f.report.ssim,
                iou: f.report.iou,
                parameter_count: r.parameter_count,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    LatentMode,
    FusionMode,
    ModuleRemoval,
    Depth,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latent" | "latent_mode" => Ok(AblationAxis::LatentMode),
            "fusion" | "fusion_mode" => Ok(AblationAxis::FusionMode),
            "modules" | "module_removal" => Ok(AblationAxis::ModuleRemoval),
            "depth" => Ok(AblationAxis::Depth),
            other => Err(Error::Config(format!("unknown ablation axis '{other}'"))),
        }
    }
}

/// `(variant name, config)` for every point on an ablation axis.
pub fn ablation_variants(cfg: &ExperimentConfig, axis: AblationAxis) -> Vec<(String, ExperimentConfig)> {
    let with = |name: String, f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = cfg.clone();
        f(&mut c);
        (name, c)
    };
    match axis {
        AblationAxis::LatentMode => [
            ("noise", LatentMode::GaussianNoise),
            ("ones", LatentMode::Ones),
            ("zeros", LatentMode::Zeros),
        ]
        .into_iter()
        .map(|(n, m)| with(format!("latent={n}"), &|c| c.latent = m))
        .collect(),
        AblationAxis::FusionMode => [
            ("multiplicative", Fusion::Multiplicative),
            ("adaptive", Fusion::Adaptive),
        ]
        .into_iter()
        .map(|(n, f)| with(format!("fusion={n}"), &|c| c.fusion = f))
        .collect(),
        AblationAxis::ModuleRemoval => [
            ("full", true, true),
            ("no_feedback", false, true),
            ("no_fuse", true, false),
            ("none", false, false),
        ]
        .into_iter()
        .map(|(n, fb, fu)| {
            with(format!("modules={n}"), &|c| {
                c.feedback_enabled = fb;
                c.fuse_enabled = fu;
            })
        })
        .collect(),
        AblationAxis::Depth => [3usize, 4, 5]
            .into_iter()
            .map(|d| with(format!("depth={d}"), &|c| c.hidden_layers = Some(d)))
            .collect(),
    }
}

/// Trains the iterative model at every point of `axis`. The depth axis
/// also trains baselines when `cfg.baseline` is set.
pub fn sweep_ablation(cfg: &ExperimentConfig, axis: AblationAxis) -> Result<Vec<RunRecord>> {
    let mut base = cfg.clone();
    base.iterative = true;
    if axis != AblationAxis::Depth {
        base.baseline = false;
    }
    base.validate()?;
    let jobs = ablation_variants(&base, axis)
        .into_iter()
        .flat_map(|(name, c)| jobs_for(&c, &[c.steps], Some(name)))
        .collect();
    let records = run_jobs(jobs, base.threads)?;
    write_summary_files(&base, &records)?;
    Ok(records)
}

/// Mean and sample standard deviation (`None` for a single value).
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub steps: usize,
    pub runs: usize,
    pub psnr_mean: f64,
    pub psnr_std: Option<f64>,
    pub ssim_mean: Option<f64>,
    pub ssim_std: Option<f64>,
    pub iou_mean: Option<f64>,
    pub iou_std: Option<f64>,
    pub parameter_count: usize,
}

fn optional_stats(values: Vec<Option<f64>>) -> (Option<f64>, Option<f64>) {
    let v: Option<Vec<f64>> = values.into_iter().collect();
    match v {
        Some(v) if !v.is_empty() => {
            let (m, s) = mean_std(&v);
            (Some(m), s)
        }
        _ => (None, None),
    }
}

/// Groups final reports by `(label, steps)` across seeds.
pub fn summarize(records: &[RunRecord]) -> Vec<ReportRow> {
    let mut groups: BTreeMap<(String, usize), Vec<(&RunRecord, usize)>> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.failed) {
        for (i, f) in r.finals.iter().enumerate() {
            groups.entry((r.label.clone(), f.steps)).or_default().push((r, i));
        }
    }
    groups
        .into_iter()
        .map(|((label, steps), members)| {
            let reports: Vec<_> = members.iter().map(|(r, i)| &r.finals[*i].report).collect();
            let psnr: Vec<f64> = reports.iter().map(|m| m.psnr).collect();
            let (psnr_mean, psnr_std) = mean_std(&psnr);
            let (ssim_mean, ssim_std) = optional_stats(reports.iter().map(|m| m.ssim).collect());
            let (iou_mean, iou_std) = optional_stats(reports.iter().map(|m| m.iou).collect());
            ReportRow {
                label,
                steps,
                runs: members.len(),
                psnr_mean,
                psnr_std,
                ssim_mean,
                ssim_std,
                iou_mean,
                iou_std,
                parameter_count: members[0].0.parameter_count,
            }
        })
        .collect()
}

fn fmt_stat(mean: Option<f64>, std: Option<f64>, digits: usize) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.digits$} ± {s:.digits$}"),
        (Some(m), None) => format!("{m:.digits$}"),
        _ => "-".into(),
    }
}

/// Writes `report.csv` and `summary.txt` into `dir` and returns the rows.
pub fn report(records: &[RunRecord], dir: &Path) -> Result<Vec<ReportRow>> {
    if records.is_empty() {
        return Err(Error::Config("report needs at least one record".into()));
    }
    let rows = summarize(records);
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("report.csv");
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let mut text = String::new();
    let _ = writeln!(text, "{:<32} {:>5} {:>4} {:>18} {:>16} {:>16} {:>10}", "model", "steps", "runs", "PSNR (dB)", "SSIM", "IoU", "params");
    for r in &rows {
        let _ = writeln!(
            text,
            "{:<32} {:>5} {:>4} {:>18} {:>16} {:>16} {:>10}",
            r.label,
            r.steps,
            r.runs,
            fmt_stat(Some(r.psnr_mean), r.psnr_std, 2),
            fmt_stat(r.ssim_mean, r.ssim_std, 4),
            fmt_stat(r.iou_mean, r.iou_std, 4),
            r.parameter_count,
        );
    }
    let failed = records.iter().filter(|r| r.failed).count();
    if failed > 0 {
        let _ = writeln!(text, "{failed} failed run(s) excluded");
    }
    let path = dir.join("summary.txt");
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    Ok(rows)
}

/// Loads records from `record.json` / `records.json` files, searching
/// directories recursively.
pub fn load_records(paths: &[PathBuf]) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .collect();
            entries.sort();
            let nested: Vec<PathBuf> = entries
                .into_iter()
                .filter(|e| e.is_dir() || e.file_name().is_some_and(|n| n == "record.json"))
                .collect();
            out.extend(load_records(&nested)?);
        } else {
            let s = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            match serde_json::from_str::<Vec<RunRecord>>(&s) {
                Ok(list) => out.extend(list),
                Err(_) => out.push(RunRecord::from_json(&s)?),
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricReport;
    use crate::record::StepsReport;

    fn rec(label: &str, seed: u64, psnr: f64) -> RunRecord {
        let mut r = RunRecord::new(label, true, seed);
        r.finals.push(StepsReport {
            steps: 2,
            report: MetricReport { psnr, mse: 0.0, ssim: Some(0.5), iou: None },
        });
        r
    }

    #[test]
    fn defaults_follow_table() {
        assert_eq!(default_hyperparameters(TaskName::Fit, BackboneKind::Siren), (Some(52.0), None));
        assert_eq!(default_hyperparameters(TaskName::Occupancy, BackboneKind::Wire), (Some(10.0), Some(20.0)));
        assert_eq!(default_hyperparameters(TaskName::Denoise, BackboneKind::Gauss), (None, Some(18.0)));
        let cfg = ExperimentConfig::for_task(TaskName::Occupancy);
        assert_eq!(cfg.train_config(0).iterations, 200);
        assert_eq!(cfg.steps, 2);
        assert_eq!(ExperimentConfig::for_task(TaskName::Fit).train_config(0).iterations, 2000);
    }

    #[test]
    fn json_fields_override_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"task": "denoise", "seeds": [0, 1], "omega": 30.0}"#).unwrap();
        assert_eq!(cfg.task, TaskName::Denoise);
        assert_eq!(cfg.seeds, vec![0, 1]);
        assert_eq!(cfg.activation().unwrap(), Activation::Sine { omega: 30.0 });
        assert!(ExperimentConfig::from_json(r#"{"task": "paint"}"#).is_err());
    }

    #[test]
    fn single_seed_has_no_std() {
        let rows = summarize(&[rec("a", 0, 30.0)]);
        assert_eq!(rows[0].psnr_std, None);
        assert_eq!(fmt_stat(Some(30.0), None, 2), "30.00");
    }

    #[test]
    fn identical_records_zero_std() {
        let records: Vec<_> = (0..5).map(|s| rec("a", s, 31.5)).collect();
        let rows = summarize(&records);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].runs, 5);
        assert_eq!(rows[0].psnr_std, Some(0.0));
    }

    #[test]
    fn means_match_hand_computation() {
        let records = vec![rec("a", 0, 30.0), rec("a", 1, 32.0), rec("b", 0, 20.0)];
        let rows = summarize(&records);
        assert_eq!(rows[0].label, "a");
        assert_eq!(rows[0].psnr_mean, 31.0);
        assert!((rows[0].psnr_std.unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(rows[1].psnr_mean, 20.0);
    }

    #[test]
    fn ablation_axes_enumerate() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ablation_variants(&cfg, AblationAxis::LatentMode).len(), 3);
        assert_eq!(ablation_variants(&cfg, AblationAxis::FusionMode).len(), 2);
        let removal = ablation_variants(&cfg, AblationAxis::ModuleRemoval);
        assert_eq!(removal.len(), 4);
        assert!(!removal[3].1.feedback_enabled && !removal[3].1.fuse_enabled);
        assert_eq!(ablation_variants(&cfg, AblationAxis::Depth)[2].1.hidden_layers, Some(5));
    }

    #[test]
    fn voxel_export_keeps_axes() {
        // elongated along x, so a transposed export would be caught
        let shape = OccupancyShape::Box { half_extents: [0.9, 0.3, 0.5] };
        let task = make_occupancy_task(&shape, 8, 10, &mut Rng::new(0)).unwrap();
        let grid = field_to_voxels(&task.eval_target, &task.eval_grid).unwrap();
        let coords = task.eval_coords.real().unwrap();
        for row in coords.rows() {
            let p = [row[0], row[1], row[2]];
            assert_eq!(grid.contains(p), shape.contains(p), "at {p:?}");
        }
        let slice = mid_slice(&task.eval_target, &task.eval_grid).unwrap();
        assert_eq!(slice.get(0, 5, 0), 1.0);
        assert_eq!(slice.get(5, 0, 0), 0.0);
    }

    #[test]
    fn report_requires_records() {
        assert!(report(&[], Path::new("/nonexistent")).is_err());
    }
}
