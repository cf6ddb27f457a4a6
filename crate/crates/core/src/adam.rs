//! Adam with bias correction.
//!
//! Complex parameters are updated component-wise: real and imaginary parts
//! keep independent first and second moments.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    /// Per parameter tensor, one entry per real scalar.
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPS,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over `(parameter, gradient)` pairs; gradients are zeroed.
    ///
    /// The pairs must be presented in the same order on every call.
    pub fn step<'a, I>(&mut self, pairs: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a mut Tensor2, &'a mut Tensor2)>,
    {
        let pairs: Vec<_> = pairs.into_iter().collect();
        if self.m.is_empty() {
            self.m = pairs.iter().map(|(p, _)| vec![0.0; p.scalar_count()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != pairs.len() {
            return Err(Error::shape("adam_step", self.m.len(), pairs.len()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (k, (param, grad)) in pairs.into_iter().enumerate() {
            if param.shape() != grad.shape() || param.dtype() != grad.dtype() {
                return Err(Error::shape(
                    "adam_step",
                    format!("{:?}", param.shape()),
                    format!("{:?}", grad.shape()),
                ));
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            if m.len() != param.scalar_count() {
                return Err(Error::shape("adam_step", m.len(), param.scalar_count()));
            }
            match (param, &mut *grad) {
                (Tensor2::Real(p), Tensor2::Real(g)) => {
                    for (i, (p, g)) in p.iter_mut().zip(g.iter()).enumerate() {
                        update(p, *g, &mut m[i], &mut v[i]);
                    }
                }
                (Tensor2::Complex(p), Tensor2::Complex(g)) => {
                    for (i, (p, g)) in p.iter_mut().zip(g.iter()).enumerate() {
                        let Complex64 { re, im } = p;
                        update(re, g.re, &mut m[2 * i], &mut v[2 * i]);
                        update(im, g.im, &mut m[2 * i + 1], &mut v[2 * i + 1]);
                    }
                }
                _ => return Err(Error::dtype("adam_step", "parameter/gradient dtype mismatch")),
            }
            grad.fill_zero();
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`] over parallel slices.
pub fn adam_step(params: &mut [Tensor2], grads: &mut [Tensor2], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape("adam_step", params.len(), grads.len()));
    }
    state.step(params.iter_mut().zip(grads.iter_mut()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor2::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap()];
        let mut g = vec![Tensor2::filled(1, 3, 0.0)];
        let mut s = AdamState::new(1e-3);
        for _ in 0..5 {
            adam_step(&mut p, &mut g, &mut s).unwrap();
        }
        assert_eq!(p[0].to_vec().unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = vec![Tensor2::filled(1, 1, 0.0)];
        let mut g = vec![Tensor2::filled(1, 1, 1.0)];
        let mut s = AdamState::new(1e-3);
        adam_step(&mut p, &mut g, &mut s).unwrap();
        // m_hat = 1, v_hat = 1 on the first step
        let expected = -1e-3 / (1.0 + EPS);
        assert!((p[0].to_vec().unwrap()[0] - expected).abs() < 1e-18);
        assert_eq!(g[0].to_vec().unwrap(), vec![0.0]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_is_scale_invariant() {
        let mut p = vec![Tensor2::filled(1, 2, 0.0)];
        let mut g = vec![Tensor2::from_vec(1, 2, vec![0.3, 0.6]).unwrap()];
        let mut s = AdamState::new(1e-3);
        adam_step(&mut p, &mut g, &mut s).unwrap();
        let d = p[0].to_vec().unwrap();
        assert!((d[0] - d[1]).abs() < 1e-10);
    }

    #[test]
    fn complex_components_are_independent() {
        let mut p = vec![Tensor2::zeros(1, 1, crate::tensor::Dtype::Complex128)];
        let mut g = vec![Tensor2::from_complex_vec(1, 1, vec![Complex64::new(1.0, -4.0)]).unwrap()];
        let mut s = AdamState::new(1e-2);
        adam_step(&mut p, &mut g, &mut s).unwrap();
        let c = p[0].complex().unwrap()[[0, 0]];
        assert!((c.re + 1e-2).abs() < 1e-9);
        assert!((c.im - 1e-2).abs() < 1e-9);
    }

    #[test]
    fn step_count_increases() {
        let mut p = vec![Tensor2::filled(2, 2, 1.0)];
        let mut g = vec![Tensor2::filled(2, 2, 0.1)];
        let mut s = AdamState::new(1e-3);
        for k in 1..=3 {
            adam_step(&mut p, &mut g, &mut s).unwrap();
            assert_eq!(s.step_count(), k);
        }
    }

    #[test]
    fn mismatched_shapes_error() {
        let mut p = vec![Tensor2::filled(2, 2, 1.0)];
        let mut g = vec![Tensor2::filled(2, 1, 0.1)];
        assert!(adam_step(&mut p, &mut g, &mut AdamState::new(1e-3)).is_err());
    }
}
