use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use iinr::harness::{
    self, AblationAxis, BackboneKind, ExperimentConfig, ImageFormat, TaskName, DEFAULT_STEPS_LIST,
};
use iinr::iinr::latent::LatentMode;
use iinr::iinr::model::Fusion;
use iinr::RunRecord;

/// Iterative implicit neural representations: training, evaluation and sweeps.
#[derive(Parser, Debug)]
#[command(name = "iinr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit an image.
    Fit(RunArgs),
    /// Single-image super-resolution from a box-downsampled copy.
    Sr(RunArgs),
    /// Denoise an image corrupted with Poisson + readout noise.
    Denoise(RunArgs),
    /// Fit a 3-D occupancy field.
    Occupancy(RunArgs),
    /// Train the iterative model once and evaluate several step counts.
    SweepSteps {
        #[arg(long, default_value = "fit")]
        task: TaskName,
        /// Comma-separated step counts.
        #[arg(long, value_delimiter = ',')]
        steps_list: Option<Vec<usize>>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Ablation grid over one axis: latent, fusion, modules or depth.
    Ablate {
        #[arg(long, default_value = "fit")]
        task: TaskName,
        #[arg(long)]
        axis: AblationAxis,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Summarize records (files or run directories) into report.csv and summary.txt.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, env = harness::ENV_OUT_DIR, default_value = "runs")]
        output_dir: PathBuf,
    },
}

fn parse_fusion(s: &str) -> Result<Fusion, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| {
        format!("unknown fusion '{s}' (multiplicative, adaptive)")
    })
}

fn parse_latent(s: &str) -> Result<LatentMode, String> {
    let s = if s == "noise" { "gaussian_noise" } else { s };
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown latent mode '{s}' (noise, ones, zeros)"))
}

fn parse_format(s: &str) -> Result<ImageFormat, String> {
    match s {
        "pnm" => Ok(ImageFormat::Pnm),
        "png" => Ok(ImageFormat::Png),
        _ => Err(format!("unknown image format '{s}' (pnm, png)")),
    }
}

/// Flags mirroring [`ExperimentConfig`]. Unset flags leave the config
/// file (or the per-task defaults) untouched.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// JSON file with ExperimentConfig fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long)]
    max_photons: Option<f64>,
    #[arg(long)]
    readout: Option<f64>,
    /// Sphere radius for the analytic occupancy shape.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    voxels: Option<PathBuf>,
    #[arg(long)]
    train_samples: Option<usize>,
    #[arg(long)]
    eval_grid: Option<usize>,
    #[arg(long)]
    backbone: Option<BackboneKind>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    hidden_layers: Option<usize>,
    /// Train only the iterative model.
    #[arg(long, conflicts_with = "baseline_only")]
    iterative_only: bool,
    /// Train only the single-shot baseline.
    #[arg(long)]
    baseline_only: bool,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_parser = parse_fusion)]
    fusion: Option<Fusion>,
    #[arg(long, value_parser = parse_latent)]
    latent: Option<LatentMode>,
    #[arg(long)]
    no_feedback: bool,
    #[arg(long)]
    no_fuse: bool,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_final: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Allow parallel evaluation (results may differ in the last bits).
    #[arg(long)]
    nondeterministic: bool,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_parser = parse_format)]
    image_format: Option<ImageFormat>,
}

impl RunArgs {
    /// Precedence: flags, then environment, then config file, then defaults.
    fn resolve(&self, task: TaskName) -> iinr::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::read(p)?,
            None => ExperimentConfig::for_task(task),
        };
        cfg.task = task;
        cfg.apply_env()?;
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            )*};
        }
        macro_rules! set_opt {
            ($($field:ident),*) => {$(
                if self.$field.is_some() {
                    cfg.$field = self.$field.clone();
                }
            )*};
        }
        set!(scale, max_photons, readout, train_samples, eval_grid, backbone, steps, epsilon);
        set!(fusion, latent, lr, lr_final, eval_every, seeds, output_dir, image_format);
        set_opt!(image, crop, voxels, omega, sigma, width, hidden_layers, iterations, threads);
        if let Some(r) = self.radius {
            cfg.shape = iinr::tasks::OccupancyShape::Sphere { radius: r };
        }
        if self.iterative_only {
            cfg.baseline = false;
        }
        if self.baseline_only {
            cfg.iterative = false;
        }
        if self.no_feedback {
            cfg.feedback_enabled = false;
        }
        if self.no_fuse {
            cfg.fuse_enabled = false;
        }
        if self.nondeterministic {
            cfg.deterministic = false;
        }
        Ok(cfg)
    }
}

fn print_summary(records: &[RunRecord]) {
    for r in records {
        match (&r.failure, r.finals.is_empty()) {
            (Some(f), _) => println!("{} seed {}: FAILED ({f})", r.label, r.seed),
            (None, true) => println!("{} seed {}: no evaluation", r.label, r.seed),
            (None, false) => {
                for f in &r.finals {
                    let mut line = format!(
                        "{} seed {} steps {}: PSNR {:.2} dB",
                        r.label, r.seed, f.steps, f.report.psnr
                    );
                    if let Some(s) = f.report.ssim {
                        line += &format!(", SSIM {s:.4}");
                    }
                    if let Some(i) = f.report.iou {
                        line += &format!(", IoU {i:.4}");
                    }
                    println!("{line} ({:.1} s)", r.wall_time_s);
                }
            }
        }
    }
}

fn run(cli: Cli) -> iinr::Result<()> {
    let records = match cli.command {
        Command::Fit(a) => harness::run_experiment(&a.resolve(TaskName::Fit)?)?,
        Command::Sr(a) => harness::run_experiment(&a.resolve(TaskName::Sr)?)?,
        Command::Denoise(a) => harness::run_experiment(&a.resolve(TaskName::Denoise)?)?,
        Command::Occupancy(a) => harness::run_experiment(&a.resolve(TaskName::Occupancy)?)?,
        Command::SweepSteps { task, steps_list, run } => {
            let list = steps_list.unwrap_or_else(|| DEFAULT_STEPS_LIST.to_vec());
            harness::sweep_steps(&run.resolve(task)?, &list)?
        }
        Command::Ablate { task, axis, run } => harness::sweep_ablation(&run.resolve(task)?, axis)?,
        Command::Report { inputs, output_dir } => {
            let records = harness::load_records(&inputs)?;
            harness::report(&records, &output_dir)?;
            let summary = output_dir.join("summary.txt");
            print!("{}", std::fs::read_to_string(&summary).map_err(|e| iinr::Error::io(summary, e))?);
            return Ok(());
        }
    };
    print_summary(&records);
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
