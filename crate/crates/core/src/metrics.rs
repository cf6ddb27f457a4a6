//! Reconstruction quality metrics: MSE, PSNR, SSIM and IoU.
//!
//! All image metrics clamp both inputs to `[0, 1]` first; peak is 1.0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

pub const PSNR_CAP_DB: f64 = 100.0;
pub const PSNR_CAP_MSE: f64 = 1e-10;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub mse: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn check_shapes(op: &'static str, a: &Tensor2, b: &Tensor2) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{}x{}", a.rows(), a.cols()),
            format!("{}x{}", b.rows(), b.cols()),
        ));
    }
    Ok(())
}

/// Mean squared error of the clamped inputs.
pub fn mse(a: &Tensor2, b: &Tensor2) -> Result<f64> {
    check_shapes("mse", a, b)?;
    let (a, b) = (a.real()?, b.real()?);
    let sum: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| (clamp01(x) - clamp01(y)).powi(2))
        .sum();
    Ok(sum / a.len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < PSNR_CAP_MSE {
        PSNR_CAP_DB
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// `10 log10(1 / mse)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Tensor2, b: &Tensor2) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Clamped channel-mean grayscale of an image-shaped tensor (`h*w x c`).
pub fn to_gray(img: &Tensor2, height: usize, width: usize) -> Result<Vec<f64>> {
    if img.rows() != height * width {
        return Err(Error::shape("ssim", height * width, img.rows()));
    }
    let a = img.real()?;
    let c = a.ncols() as f64;
    Ok(a.rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| clamp01(v)).sum::<f64>() / c)
        .collect())
}

/// Local SSIM statistics combined into the index.
pub fn ssim_from_moments(mx: f64, my: f64, sxx: f64, syy: f64, sxy: f64) -> f64 {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let vx = sxx - mx * mx;
    let vy = syy - my * my;
    let cov = sxy - mx * my;
    ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Mean single-scale SSIM over all valid 11x11 Gaussian windows.
pub fn ssim(a: &Tensor2, b: &Tensor2, height: usize, width: usize) -> Result<f64> {
    check_shapes("ssim", a, b)?;
    if height < SSIM_WINDOW || width < SSIM_WINDOW {
        return Err(Error::domain(
            "ssim",
            format!("image {width}x{height} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let x = to_gray(a, height, width)?;
    let y = to_gray(b, height, width)?;
    Ok(ssim_gray(&x, &y, height, width))
}

/// Separable-filter SSIM on grayscale planes already validated by the caller.
pub fn ssim_gray(x: &[f64], y: &[f64], height: usize, width: usize) -> f64 {
    let taps = gaussian_taps();
    let (oh, ow) = (height - SSIM_WINDOW + 1, width - SSIM_WINDOW + 1);
    let planes: [Vec<f64>; 5] = [
        x.to_vec(),
        y.to_vec(),
        x.iter().map(|v| v * v).collect(),
        y.iter().map(|v| v * v).collect(),
        x.iter().zip(y).map(|(a, b)| a * b).collect(),
    ];
    let filtered: Vec<Vec<f64>> = planes
        .iter()
        .map(|p| {
            // horizontal pass: height x ow
            let mut h = vec![0.0; height * ow];
            for r in 0..height {
                for c in 0..ow {
                    let row = &p[r * width + c..r * width + c + SSIM_WINDOW];
                    h[r * ow + c] = row.iter().zip(&taps).map(|(v, t)| v * t).sum();
                }
            }
            // vertical pass: oh x ow
            let mut v = vec![0.0; oh * ow];
            for r in 0..oh {
                for c in 0..ow {
                    v[r * ow + c] = (0..SSIM_WINDOW).map(|k| h[(r + k) * ow + c] * taps[k]).sum();
                }
            }
            v
        })
        .collect();
    let total: f64 = (0..oh * ow)
        .map(|i| {
            ssim_from_moments(
                filtered[0][i],
                filtered[1][i],
                filtered[2][i],
                filtered[3][i],
                filtered[4][i],
            )
        })
        .sum();
    total / (oh * ow) as f64
}

/// `|pred & gt| / |pred | gt|` after thresholding both; 1.0 when both empty.
pub fn iou(pred: &Tensor2, gt: &Tensor2, threshold: f64) -> Result<f64> {
    check_shapes("iou", pred, gt)?;
    let (p, g) = (pred.real()?, gt.real()?);
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in p.iter().zip(g.iter()) {
        let (a, b) = (a >= threshold, b >= threshold);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}
