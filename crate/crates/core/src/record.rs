//! Run records: what a training run produced, in a form that serializes
//! losslessly to `record.json` and flattens to `metrics.csv`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricReport;

/// Metrics logged at one training checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetrics {
    pub iteration: usize,
    pub loss: f64,
    pub psnr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
}

/// Final evaluation at a given number of reconstruction steps
/// (always 1 for single-shot baselines).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepsReport {
    pub steps: usize,
    pub report: MetricReport,
}

/// FLOPs per coordinate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub backbone: u64,
    pub per_step: u64,
}

impl FlopsReport {
    pub fn step_ratio(&self) -> f64 {
        self.per_step as f64 / self.backbone as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Model label, e.g. `siren` or `i-siren`.
    pub label: String,
    pub iterative: bool,
    pub seed: u64,
    /// Snapshot of the configuration that produced this run.
    pub config: serde_json::Value,
    pub checkpoints: Vec<CheckpointMetrics>,
    pub finals: Vec<StepsReport>,
    pub parameter_count: usize,
    pub added_parameter_count: usize,
    pub flops: FlopsReport,
    pub wall_time_s: f64,
    #[serde(default)]
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl RunRecord {
    pub fn new(label: impl Into<String>, iterative: bool, seed: u64) -> Self {
        RunRecord {
            label: label.into(),
            iterative,
            seed,
            config: serde_json::Value::Null,
            checkpoints: Vec::new(),
            finals: Vec::new(),
            parameter_count: 0,
            added_parameter_count: 0,
            flops: FlopsReport::default(),
            wall_time_s: 0.0,
            failed: false,
            failure: None,
        }
    }

    /// Final report at `steps`, if evaluated.
    pub fn final_at(&self, steps: usize) -> Option<&MetricReport> {
        self.finals.iter().find(|f| f.steps == steps).map(|f| &f.report)
    }

    /// The first final report (the configured steps value).
    pub fn final_report(&self) -> Option<&MetricReport> {
        self.finals.first().map(|f| &f.report)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// One `metrics.csv` row. Wall time is deliberately absent so the file is
/// bitwise reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub label: String,
    pub seed: u64,
    pub phase: String,
    pub iteration: usize,
    pub steps: usize,
    pub loss: Option<f64>,
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub iou: Option<f64>,
}

pub fn metrics_rows(record: &RunRecord) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    let default_steps = record.finals.first().map_or(1, |f| f.steps);
    for c in &record.checkpoints {
        rows.push(MetricsRow {
            label: record.label.clone(),
            seed: record.seed,
            phase: "train".into(),
            iteration: c.iteration,
            steps: default_steps,
            loss: Some(c.loss),
            psnr: c.psnr,
            ssim: c.ssim,
            iou: c.iou,
        });
    }
    let last = record.checkpoints.last().map_or(0, |c| c.iteration);
    for f in &record.finals {
        rows.push(MetricsRow {
            label: record.label.clone(),
            seed: record.seed,
            phase: "final".into(),
            iteration: last,
            steps: f.steps,
            loss: None,
            psnr: f.report.psnr,
            ssim: f.report.ssim,
            iou: f.report.iou,
        });
    }
    rows
}

pub fn write_metrics_csv(path: impl AsRef<Path>, records: &[RunRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in records {
        for row in metrics_rows(r) {
            w.serialize(row)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunRecord {
        let mut r = RunRecord::new("i-siren", true, 7);
        r.config = serde_json::json!({"lr": 0.001});
        r.checkpoints.push(CheckpointMetrics {
            iteration: 10,
            loss: 0.1 + 0.2,
            psnr: 21.123456789012345,
            ssim: Some(0.5),
            iou: None,
        });
        r.finals.push(StepsReport {
            steps: 2,
            report: MetricReport { psnr: 30.0, mse: 1e-3, ssim: Some(0.9), iou: None },
        });
        r.flops = FlopsReport { backbone: 100, per_step: 3 };
        r
    }

    #[test]
    fn json_roundtrip_is_lossless() {
        let r = sample();
        assert_eq!(RunRecord::from_json(&r.to_json().unwrap()).unwrap(), r);
    }

    #[test]
    fn csv_rows() {
        let rows = metrics_rows(&sample());
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].phase, "train");
        assert_eq!(rows[1].steps, 2);
        assert_eq!(rows[1].iteration, 10);
    }

    #[test]
    fn lookups() {
        let r = sample();
        assert_eq!(r.final_at(2).unwrap().psnr, 30.0);
        assert!(r.final_at(1).is_none());
        assert!((r.flops.step_ratio() - 0.03).abs() < 1e-15);
    }
}
