//! Pointwise nonlinearities used by the backbones and their derivatives.

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    /// `sin(omega * z)`
    Sine { omega: f64 },
    /// `exp(-(sigma * z)^2)`
    Gauss { sigma: f64 },
    /// `exp(i * omega * z - |sigma * z|^2)`, complex valued.
    GaborWavelet { omega: f64, sigma: f64 },
    Relu,
    Identity,
}

/// What a training forward pass keeps for the backward pass.
#[derive(Clone, Debug)]
pub enum ActivationCache {
    /// The activation is the identity.
    Passthrough,
    /// Elementwise derivative of a real activation.
    Derivative(Array2<f64>),
    /// Pre-activation, differentiated on demand.
    PreActivation(Tensor2),
}

impl Activation {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64| {
            Err(Error::domain(
                "Activation",
                format!("{name} must be positive and finite, got {v}"),
            ))
        };
        match *self {
            Activation::Sine { omega } if !(omega > 0.0 && omega.is_finite()) => bad("omega", omega),
            Activation::Gauss { sigma } if !(sigma > 0.0 && sigma.is_finite()) => bad("sigma", sigma),
            Activation::GaborWavelet { omega, .. } if !(omega > 0.0 && omega.is_finite()) => {
                bad("omega", omega)
            }
            Activation::GaborWavelet { sigma, .. } if !(sigma > 0.0 && sigma.is_finite()) => {
                bad("sigma", sigma)
            }
            _ => Ok(()),
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, Activation::GaborWavelet { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Sine { .. } => "sine",
            Activation::Gauss { .. } => "gauss",
            Activation::GaborWavelet { .. } => "gabor",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn apply(&self, z: &Tensor2) -> Result<Tensor2> {
        match (*self, z) {
            (Activation::Identity, _) => Ok(z.clone()),
            (Activation::Sine { omega }, Tensor2::Real(z)) => {
                Ok(Tensor2::Real(z.mapv(|v| (omega * v).sin())))
            }
            (Activation::Gauss { sigma }, Tensor2::Real(z)) => {
                Ok(Tensor2::Real(z.mapv(|v| (-(sigma * v).powi(2)).exp())))
            }
            (Activation::Relu, Tensor2::Real(z)) => Ok(Tensor2::Real(z.mapv(|v| v.max(0.0)))),
            (Activation::GaborWavelet { omega, sigma }, Tensor2::Real(z)) => {
                Ok(Tensor2::Complex(z.mapv(|v| gabor(omega, sigma, Complex64::new(v, 0.0)))))
            }
            (Activation::GaborWavelet { omega, sigma }, Tensor2::Complex(z)) => {
                Ok(Tensor2::Complex(z.mapv(|v| gabor(omega, sigma, v))))
            }
            (a, Tensor2::Complex(_)) => Err(Error::dtype(
                "activation_apply",
                format!("{} activation does not accept complex input", a.name()),
            )),
        }
    }

    /// [`apply`](Self::apply) that also returns what [`backward_cached`]
    /// needs. Real activations compute their derivative in the same sweep.
    ///
    /// [`backward_cached`]: Self::backward_cached
    pub fn apply_train(&self, z: Tensor2) -> Result<(Tensor2, ActivationCache)> {
        let real = match (*self, z) {
            (Activation::Identity, z) => return Ok((z, ActivationCache::Passthrough)),
            (a, Tensor2::Real(z)) if !a.is_complex() => z,
            (a, z) => {
                let out = a.apply(&z)?;
                return Ok((out, ActivationCache::PreActivation(z)));
            }
        };
        let mut out = real;
        let mut d = Array2::zeros(out.raw_dim());
        match *self {
            Activation::Sine { omega } => Zip::from(&mut out).and(&mut d).for_each(|o, d| {
                let (s, c) = (omega * *o).sin_cos();
                *o = s;
                *d = omega * c;
            }),
            Activation::Gauss { sigma } => {
                let s2 = sigma * sigma;
                Zip::from(&mut out).and(&mut d).for_each(|o, d| {
                    let z = *o;
                    let e = (-(s2 * z * z)).exp();
                    *o = e;
                    *d = -2.0 * s2 * z * e;
                })
            }
            Activation::Relu => Zip::from(&mut out).and(&mut d).for_each(|o, d| {
                if *o > 0.0 {
                    *d = 1.0;
                } else {
                    *o = 0.0;
                }
            }),
            Activation::Identity | Activation::GaborWavelet { .. } => unreachable!("handled above"),
        }
        Ok((Tensor2::Real(out), ActivationCache::Derivative(d)))
    }

    /// Backward through a cache produced by [`apply_train`](Self::apply_train).
    pub fn backward_cached(&self, cache: &ActivationCache, grad: &Tensor2) -> Result<Tensor2> {
        match cache {
            ActivationCache::Passthrough => Ok(grad.clone()),
            ActivationCache::PreActivation(z) => self.backward(z, grad),
            ActivationCache::Derivative(d) => {
                let g = grad.real()?;
                crate::tensor::check_same_shape("activation_backward", d, g)?;
                Ok(Tensor2::Real(d * g))
            }
        }
    }

    /// Cotangent with respect to the pre-activation `z`, given the
    /// cotangent `grad` of the activation output.
    pub fn backward(&self, z: &Tensor2, grad: &Tensor2) -> Result<Tensor2> {
        if z.shape() != grad.shape() {
            return Err(Error::shape(
                "activation_backward",
                format!("{}x{}", z.rows(), z.cols()),
                format!("{}x{}", grad.rows(), grad.cols()),
            ));
        }
        match (*self, z, grad) {
            (Activation::Identity, _, g) => Ok(g.clone()),
            (Activation::Sine { omega }, Tensor2::Real(z), Tensor2::Real(g)) => {
                Ok(Tensor2::Real(zip_real(z, g, |z, g| g * (omega * (omega * z).cos()))))
            }
            (Activation::Gauss { sigma }, Tensor2::Real(z), Tensor2::Real(g)) => {
                let s2 = sigma * sigma;
                Ok(Tensor2::Real(zip_real(z, g, |z, g| {
                    g * (-2.0 * s2 * z * (-(s2 * z * z)).exp())
                })))
            }
            (Activation::Relu, Tensor2::Real(z), Tensor2::Real(g)) => {
                Ok(Tensor2::Real(zip_real(z, g, |z, g| if z > 0.0 { g } else { 0.0 })))
            }
            (Activation::GaborWavelet { omega, sigma }, Tensor2::Real(z), g) => {
                let g = g.to_complex();
                let s2 = sigma * sigma;
                let mut out = Array2::zeros(z.raw_dim());
                Zip::from(&mut out).and(z).and(&g).for_each(|o, &u, &g| {
                    let a = gabor(omega, sigma, Complex64::new(u, 0.0));
                    let du = a * Complex64::new(-2.0 * s2 * u, omega);
                    *o = (g.conj() * du).re;
                });
                Ok(Tensor2::Real(out))
            }
            (Activation::GaborWavelet { omega, sigma }, Tensor2::Complex(z), g) => {
                let g = g.to_complex();
                let s2 = sigma * sigma;
                let mut out = Array2::zeros(z.raw_dim());
                Zip::from(&mut out).and(z).and(&g).for_each(|o, &zv, &g| {
                    let a = gabor(omega, sigma, zv);
                    // partials of a with respect to Re z and Im z
                    let du = a * Complex64::new(-2.0 * s2 * zv.re, omega);
                    let dv = a * Complex64::new(-omega - 2.0 * s2 * zv.im, 0.0);
                    *o = Complex64::new((g.conj() * du).re, (g.conj() * dv).re);
                });
                Ok(Tensor2::Complex(out))
            }
            (a, _, _) => Err(Error::dtype(
                "activation_backward",
                format!("{} activation received complex data", a.name()),
            )),
        }
    }

    /// Charged cost of one activation evaluation.
    pub fn flops_per_element(&self) -> u64 {
        match self {
            Activation::Identity => 0,
            _ => 4,
        }
    }
}

fn gabor(omega: f64, sigma: f64, z: Complex64) -> Complex64 {
    let s = z * sigma;
    (Complex64::new(0.0, omega) * z - s.norm_sqr()).exp()
}

fn zip_real(z: &Array2<f64>, g: &Array2<f64>, f: impl Fn(f64, f64) -> f64) -> Array2<f64> {
    let mut out = Array2::zeros(z.raw_dim());
    Zip::from(&mut out)
        .and(z)
        .and(g)
        .for_each(|o, &z, &g| *o = f(z, g));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn scalar(a: Activation, z: f64) -> f64 {
        a.apply(&Tensor2::filled(1, 1, z)).unwrap().to_vec().unwrap()[0]
    }

    fn scalar_grad(a: Activation, z: f64) -> f64 {
        a.backward(&Tensor2::filled(1, 1, z), &Tensor2::filled(1, 1, 1.0))
            .unwrap()
            .to_vec()
            .unwrap()[0]
    }

    #[test]
    fn sine_at_origin() {
        let a = Activation::Sine { omega: 30.0 };
        assert_eq!(scalar(a, 0.0), 0.0);
        assert_eq!(scalar_grad(a, 0.0), 30.0);
    }

    #[test]
    fn gauss_at_origin() {
        let a = Activation::Gauss { sigma: 18.0 };
        assert_eq!(scalar(a, 0.0), 1.0);
        assert_eq!(scalar_grad(a, 0.0), 0.0);
    }

    #[test]
    fn gabor_at_origin() {
        let a = Activation::GaborWavelet { omega: 7.0, sigma: 13.0 };
        let out = a.apply(&Tensor2::filled(1, 1, 0.0)).unwrap();
        assert_eq!(out.complex().unwrap()[[0, 0]], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn complex_rejected_by_real_activations() {
        let z = Tensor2::zeros(1, 1, crate::tensor::Dtype::Complex128);
        assert!(Activation::Sine { omega: 1.0 }.apply(&z).is_err());
        assert!(Activation::Relu.apply(&z).is_err());
    }

    #[test]
    fn validate_rejects_nonpositive() {
        assert!(Activation::Sine { omega: 0.0 }.validate().is_err());
        assert!(Activation::Gauss { sigma: -1.0 }.validate().is_err());
        assert!(Activation::GaborWavelet { omega: 1.0, sigma: 0.0 }.validate().is_err());
        assert!(Activation::Relu.validate().is_ok());
    }

    #[test]
    fn output_ranges() {
        let mut rng = Rng::new(2);
        let z = rng.gaussian(200, 5);
        let sine = Activation::Sine { omega: 30.0 }.apply(&z).unwrap();
        assert!(sine.to_vec().unwrap().iter().all(|v| (-1.0..=1.0).contains(v)));
        let gauss = Activation::Gauss { sigma: 2.0 }.apply(&z).unwrap();
        assert!(gauss.to_vec().unwrap().iter().all(|&v| v > 0.0 && v <= 1.0 || v == 0.0));
        // the unit bound holds for real pre-activations; a complex z with
        // negative imaginary part is amplified by exp(-omega * Im z)
        let gab = Activation::GaborWavelet { omega: 7.0, sigma: 1.3 }.apply(&z).unwrap();
        assert!(gab.complex().unwrap().iter().all(|c| c.norm() <= 1.0 + 1e-15));
    }

    #[test]
    fn cached_path_matches_direct() {
        let mut rng = Rng::new(8);
        let z = rng.gaussian(20, 4);
        let g = rng.gaussian(20, 4);
        for a in [
            Activation::Sine { omega: 30.0 },
            Activation::Gauss { sigma: 2.0 },
            Activation::Relu,
            Activation::Identity,
            Activation::GaborWavelet { omega: 7.0, sigma: 1.3 },
        ] {
            let (out, cache) = a.apply_train(z.clone()).unwrap();
            assert_eq!(out, a.apply(&z).unwrap(), "{}", a.name());
            let cached = a.backward_cached(&cache, &g).unwrap().to_complex();
            let direct = a.backward(&z, &g).unwrap().to_complex();
            for (x, y) in cached.iter().zip(direct.iter()) {
                assert!((x - y).norm() <= 1e-12 * (1.0 + y.norm()), "{}", a.name());
            }
        }
    }

    /// Central differences at 100 random points per activation.
    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = Rng::new(17);
        let h = 1e-6;
        let acts = [
            Activation::Sine { omega: 3.0 },
            Activation::Gauss { sigma: 1.5 },
            Activation::Relu,
        ];
        for a in acts {
            for _ in 0..100 {
                let z = rng.uniform_range(-1.0, 1.0);
                if matches!(a, Activation::Relu) && z.abs() < 1e-3 {
                    continue;
                }
                let fd = (scalar(a, z + h) - scalar(a, z - h)) / (2.0 * h);
                let an = scalar_grad(a, z);
                let rel = (fd - an).abs() / an.abs().max(1e-3);
                assert!(rel < 1e-6, "{a:?} at {z}: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn gabor_derivative_matches_finite_differences() {
        let a = Activation::GaborWavelet { omega: 2.0, sigma: 0.8 };
        let mut rng = Rng::new(23);
        let h = 1e-6;
        // real loss: L = Re(c1 * a(z)) with a random complex weight c1
        for _ in 0..100 {
            let z = Complex64::new(rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0));
            let c = Complex64::new(rng.standard_normal(), rng.standard_normal());
            let loss = |z: Complex64| (c * gabor(2.0, 0.8, z)).re;
            // dL/dRe a + i dL/dIm a = conj(c)
            let g = Tensor2::Complex(Array2::from_elem((1, 1), c.conj()));
            let zt = Tensor2::Complex(Array2::from_elem((1, 1), z));
            let an = a.backward(&zt, &g).unwrap().complex().unwrap()[[0, 0]];
            let fd_re = (loss(z + h) - loss(z - h)) / (2.0 * h);
            let ih = Complex64::new(0.0, h);
            let fd_im = (loss(z + ih) - loss(z - ih)) / (2.0 * h);
            assert!((an.re - fd_re).abs() / fd_re.abs().max(1e-3) < 1e-6);
            assert!((an.im - fd_im).abs() / fd_im.abs().max(1e-3) < 1e-6);

            // real pre-activation path
            let u = z.re;
            let zr = Tensor2::filled(1, 1, u);
            let an = a.backward(&zr, &g).unwrap().to_vec().unwrap()[0];
            let fd = (loss(Complex64::new(u + h, 0.0)) - loss(Complex64::new(u - h, 0.0))) / (2.0 * h);
            assert!((an - fd).abs() / fd.abs().max(1e-3) < 1e-6);
        }
    }
}
