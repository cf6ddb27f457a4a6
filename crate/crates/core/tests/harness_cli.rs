//! End-to-end runs at toy scale: files written, formats readable,
//! determinism, and the CLI surface.

use std::path::{Path, PathBuf};
use std::process::Command;

use iinr::harness::{self, AblationAxis, ExperimentConfig, TaskName};
use iinr::imageio::{decode_pnm, read_image};
use iinr::tasks::VoxelGrid;
use iinr::{Checkpoint, RunRecord};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/astronaut64.ppm")
}

fn tiny(task: TaskName, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_task(task);
    cfg.image = Some(fixture());
    cfg.crop = Some(16);
    cfg.width = Some(16);
    cfg.hidden_layers = Some(1);
    cfg.iterations = Some(20);
    cfg.eval_every = 10;
    cfg.train_samples = 256;
    cfg.eval_grid = 12;
    cfg.output_dir = out.to_path_buf();
    cfg
}

#[test]
fn fit_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let records = harness::run_experiment(&tiny(TaskName::Fit, dir.path())).unwrap();
    assert_eq!(records.len(), 2);
    for r in &records {
        let run = harness::run_dir(&tiny(TaskName::Fit, dir.path()), r);
        for f in ["record.json", "metrics.csv", "recon.pnm", "residual.pnm", "checkpoint.bin"] {
            assert!(run.join(f).exists(), "{} missing {f}", run.display());
        }
        assert_eq!(&RunRecord::read_json(run.join("record.json")).unwrap(), r);
        let recon = read_image(run.join("recon.pnm")).unwrap();
        assert_eq!((recon.width, recon.height, recon.channels), (16, 16, 3));
        assert!(Checkpoint::read(run.join("checkpoint.bin")).is_ok());
    }
    for f in ["records.json", "metrics.csv", "report.csv", "summary.txt"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
}

#[test]
fn residual_map_is_quantized_absolute_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(TaskName::Fit, dir.path());
    cfg.baseline = false;
    let records = harness::run_experiment(&cfg).unwrap();
    let run = harness::run_dir(&cfg, &records[0]);
    let task = cfg.build_task(0).unwrap();
    let model = match Checkpoint::read(run.join("checkpoint.bin")).unwrap() {
        Checkpoint::Iinr(m) => m,
        _ => panic!("expected an iterative checkpoint"),
    };
    let pred = iinr::iinr::train::predict_iinr(&model, &task, cfg.steps, false).unwrap();
    let (p, t) = (pred.real().unwrap(), task.eval_target.real().unwrap());
    let expect: Vec<u8> = p
        .iter()
        .zip(t.iter())
        .map(|(&a, &b)| iinr::imageio::quantize((a.clamp(0.0, 1.0) - b).abs()))
        .collect();
    let bytes = std::fs::read(run.join("residual.pnm")).unwrap();
    let img = decode_pnm(&bytes).unwrap();
    let got: Vec<u8> = img.data.iter().map(|&v| iinr::imageio::quantize(v)).collect();
    assert_eq!(got, expect);
}

#[test]
fn same_seed_gives_identical_metrics_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    harness::run_experiment(&tiny(TaskName::Denoise, a.path())).unwrap();
    harness::run_experiment(&tiny(TaskName::Denoise, b.path())).unwrap();
    let read = |d: &Path| std::fs::read(d.join("metrics.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn steps_sweep_shares_one_model() {
    let dir = tempfile::tempdir().unwrap();
    let records = harness::sweep_steps(&tiny(TaskName::Fit, dir.path()), &[1, 2, 4]).unwrap();
    assert_eq!(records.len(), 1);
    let steps: Vec<usize> = records[0].finals.iter().map(|f| f.steps).collect();
    assert_eq!(steps, vec![1, 2, 4]);
    let csv = std::fs::read_to_string(dir.path().join("steps.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn latent_ablation_has_three_records() {
    let mut cfg = tiny(TaskName::Fit, Path::new("/unused"));
    cfg.dry_run = true;
    cfg.iterations = Some(3);
    let records = harness::sweep_ablation(&cfg, AblationAxis::LatentMode).unwrap();
    assert_eq!(records.len(), 3);
    assert!(records[1].label.contains("latent=ones"));
}

#[test]
fn occupancy_writes_voxels() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(TaskName::Occupancy, dir.path());
    cfg.backbone = harness::BackboneKind::Gauss;
    cfg.baseline = false;
    let records = harness::run_experiment(&cfg).unwrap();
    assert!(records[0].final_report().unwrap().iou.is_some());
    let run = harness::run_dir(&cfg, &records[0]);
    let grid = VoxelGrid::from_bytes(&std::fs::read(run.join("recon.vox")).unwrap()).unwrap();
    assert_eq!(grid.dims, [12, 12, 12]);
    let slice = read_image(run.join("recon.pnm")).unwrap();
    assert_eq!((slice.width, slice.height, slice.channels), (12, 12, 1));
}

#[test]
fn missing_image_is_an_error() {
    let mut cfg = ExperimentConfig::for_task(TaskName::Fit);
    cfg.image = Some(PathBuf::from("/nonexistent.ppm"));
    cfg.dry_run = true;
    assert!(harness::run_experiment(&cfg).is_err());
    cfg.image = None;
    assert!(harness::run_experiment(&cfg).is_err());
}

fn cli() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_iinr"));
    c.env_remove(harness::ENV_OUT_DIR).env_remove(harness::ENV_THREADS);
    c
}

#[test]
fn cli_fit_with_config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    let json = serde_json::json!({
        "image": fixture(),
        "crop": 16,
        "width": 12,
        "hidden_layers": 1,
        "iterations": 50,
        "eval_every": 25,
        "output_dir": dir.path().join("from_config"),
    });
    std::fs::write(&cfg_path, json.to_string()).unwrap();
    let out = cli()
        .args(["fit", "--config"])
        .arg(&cfg_path)
        .args(["--iterations", "5", "--iterative-only"])
        .env(harness::ENV_OUT_DIR, dir.path().join("from_env"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("i-siren seed 0 steps 2"), "{stdout}");
    let rec = RunRecord::read_json(dir.path().join("from_env/i-siren-seed0/record.json")).unwrap();
    assert_eq!(rec.config["iterations"], 5);
    assert_eq!(rec.config["width"], 12);
    assert!(!dir.path().join("from_config").exists());
}

#[test]
fn cli_report_over_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(TaskName::Fit, &dir.path().join("runs"));
    cfg.iterations = Some(5);
    cfg.seeds = vec![0, 1];
    harness::run_experiment(&cfg).unwrap();
    let out = cli()
        .arg("report")
        .arg(dir.path().join("runs"))
        .arg("--output-dir")
        .arg(dir.path().join("rep"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("rep/report.csv")).unwrap();
    // header + siren + i-siren, two seeds each
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().skip(1).all(|l| l.contains(",2,")));
}

#[test]
fn cli_rejects_bad_input() {
    let out = cli().args(["fit", "--image", "/nonexistent.ppm", "--iterations", "1"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = cli().args(["ablate", "--axis", "colour"]).output().unwrap();
    assert!(!out.status.success());
}
