//! Brute-force reference implementations for cross-checking `iinr`.
//!
//! Everything here is deliberately slow and literal: finite differences
//! instead of backprop, a double loop over SSIM windows instead of
//! separable filtering, and a reconstruction loop that reruns the whole
//! model at every step.

use iinr::iinr::model::IinrModel;
use iinr::iinr::reconstruct::Refiner;
use iinr::metrics::{SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
use iinr::mlp::MlpModel;
use iinr::{Result, Tensor2};
use num_complex::Complex64;

pub const FD_STEP: f64 = 1e-6;

/// Central-difference gradient of `loss` at `params`.
pub fn fd_gradient<F>(mut loss: F, params: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = loss(&p);
            p[i] = orig - h;
            let down = loss(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `sum(w * out)`, a linear functional whose gradient with respect to the
/// output is exactly `w`.
pub fn weighted_sum(out: &Tensor2, w: &Tensor2) -> f64 {
    let (o, w) = (out.real().expect("real output"), w.real().expect("real weights"));
    o.iter().zip(w.iter()).map(|(a, b)| a * b).sum()
}

/// FD gradient of `sum(w * mlp(input))` over the flattened parameters.
pub fn mlp_fd_gradient(model: &MlpModel, input: &Tensor2, w: &Tensor2, h: f64) -> Vec<f64> {
    let mut m = model.clone();
    fd_gradient(
        |p| {
            m.set_flat_params(p).expect("parameter count");
            weighted_sum(&m.predict(input).expect("forward"), w)
        },
        &model.flat_params(),
        h,
    )
}

/// Parameters of the backbone, FeedbackNet and FuseNet, concatenated.
pub fn iinr_flat_params(model: &IinrModel) -> Vec<f64> {
    let mut p = model.backbone.flat_params();
    p.extend(model.feedback.flat_params());
    p.extend(model.fuse.flat_params());
    p
}

pub fn iinr_flat_grads(model: &IinrModel) -> Vec<f64> {
    let mut g = model.backbone.flat_grads();
    g.extend(model.feedback.flat_grads());
    g.extend(model.fuse.flat_grads());
    g
}

fn set_iinr_params(model: &mut IinrModel, p: &[f64]) {
    let nb = model.backbone.parameter_count();
    let nf = model.feedback.parameter_count();
    model.backbone.set_flat_params(&p[..nb]).expect("backbone count");
    model.feedback.set_flat_params(&p[nb..nb + nf]).expect("feedback count");
    model.fuse.set_flat_params(&p[nb + nf..]).expect("fuse count");
}

/// FD gradient of `sum(w * f(state, x, t))` over all I-INR parameters.
pub fn iinr_fd_gradient(
    model: &IinrModel,
    coords: &Tensor2,
    state: &Tensor2,
    t: f64,
    w: &Tensor2,
    h: f64,
) -> Vec<f64> {
    let mut m = model.clone();
    fd_gradient(
        |p| {
            set_iinr_params(&mut m, p);
            weighted_sum(&m.forward(coords, state, t).expect("forward"), w)
        },
        &iinr_flat_params(model),
        h,
    )
}

/// `|p|^2` and its gradient in the conjugate convention, `dL/dRe + i dL/dIm = 2p`.
pub fn abs2_with_gradient(p: Complex64) -> (f64, Complex64) {
    (p.norm_sqr(), 2.0 * p)
}

/// FD estimate of `dL/dRe + i dL/dIm` for `L = |p|^2`.
pub fn abs2_fd_gradient(p: Complex64, h: f64) -> Complex64 {
    let g = fd_gradient(
        |v| Complex64::new(v[0], v[1]).norm_sqr(),
        &[p.re, p.im],
        h,
    );
    Complex64::new(g[0], g[1])
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over paired entries.
pub fn max_rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Mean SSIM over all 11x11 windows of two grayscale planes, each window's
/// Gaussian-weighted moments summed directly.
pub fn ssim_naive(x: &[f64], y: &[f64], height: usize, width: usize) -> f64 {
    assert!(height >= SSIM_WINDOW && width >= SSIM_WINDOW, "image smaller than window");
    let n = SSIM_WINDOW;
    let c = (n / 2) as f64;
    let mut kernel = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let (di, dj) = (i as f64 - c, j as f64 - c);
            let v = (-(di * di + dj * dj) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            kernel[i * n + j] = v;
            total += v;
        }
    }
    kernel.iter_mut().for_each(|v| *v /= total);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let (oh, ow) = (height - n + 1, width - n + 1);
    let mut sum = 0.0;
    for r in 0..oh {
        for col in 0..ow {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let k = kernel[i * n + j];
                    let a = x[(r + i) * width + col + j];
                    let b = y[(r + i) * width + col + j];
                    mx += k * a;
                    my += k * b;
                    sxx += k * a * a;
                    syy += k * b * b;
                    sxy += k * a * b;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    sum / (oh * ow) as f64
}

/// Closed-form SSIM of two constant images.
pub fn ssim_constant(a: f64, b: f64) -> f64 {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    ((2.0 * a * b + c1) * c2) / ((a * a + b * b + c1) * c2)
}

/// The reconstruction loop with the backbone rerun at every step:
/// `g <- w f(g, x, t) + (1 - w) g` with `t = (steps - k) / steps` and
/// `w = delta / t = 1 / (steps - k)`.
pub fn reconstruct_naive(
    model: &IinrModel,
    coords: &Tensor2,
    init: &Tensor2,
    steps: usize,
) -> Result<Tensor2> {
    let mut g = init.real()?.clone();
    for k in 0..steps {
        let t = (steps - k) as f64 / steps as f64;
        let w = 1.0 / (steps - k) as f64;
        let f = model.forward(coords, &Tensor2::Real(g.clone()), t)?;
        let f = f.real()?;
        for (gv, &fv) in g.iter_mut().zip(f.iter()) {
            *gv = w * fv + (1.0 - w) * *gv;
        }
    }
    Ok(Tensor2::Real(g))
}

/// A refiner that always predicts the same signal, whatever the state.
pub struct StubRefiner {
    pub target: Tensor2,
}

impl Refiner for StubRefiner {
    type Features = ();

    fn features(&self, _coords: &Tensor2) -> Result<()> {
        Ok(())
    }

    fn refine(&self, _coords: &Tensor2, _f: &(), _state: &Tensor2, _t: f64) -> Result<Tensor2> {
        Ok(self.target.clone())
    }
}

/// IoU by counting, for thresholded 0/1 fields.
pub fn iou_naive(pred: &[f64], gt: &[f64], threshold: f64) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &g) in pred.iter().zip(gt) {
        let (p, g) = (p >= threshold, g >= threshold);
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Exact mean and variance of `max(0, (P + r N) / m)` with
/// `P ~ Poisson(v m)` and `N ~ N(0, 1)`, summing the Poisson series and
/// using the rectified-Gaussian moments for each count.
pub fn clipped_sensor_moments(v: f64, max_photons: f64, readout: f64) -> (f64, f64) {
    use statrs::distribution::{Continuous, ContinuousCDF, Discrete, Normal, Poisson};
    let lambda = v * max_photons;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let (mut m1, mut m2) = (0.0, 0.0);
    let kmax = (lambda + 20.0 * lambda.sqrt() + 20.0) as u64;
    for k in 0..=kmax {
        let pk = if lambda == 0.0 {
            if k == 0 { 1.0 } else { 0.0 }
        } else {
            Poisson::new(lambda).expect("positive rate").pmf(k)
        };
        let mu = k as f64;
        // E[max(0, Y)] and E[max(0, Y)^2] for Y ~ N(mu, readout^2)
        let (e1, e2) = if readout == 0.0 {
            (mu, mu * mu)
        } else {
            let a = mu / readout;
            let (cdf, pdf) = (unit.cdf(a), unit.pdf(a));
            (
                mu * cdf + readout * pdf,
                (mu * mu + readout * readout) * cdf + mu * readout * pdf,
            )
        };
        m1 += pk * e1;
        m2 += pk * e2;
    }
    let mean = m1 / max_photons;
    let var = m2 / (max_photons * max_photons) - mean * mean;
    (mean, var)
}
