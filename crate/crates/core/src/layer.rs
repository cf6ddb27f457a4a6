//! Fully connected layer with explicit forward/backward.
//!
//! Complex layers follow the conjugate (Wirtinger) convention: for a real
//! loss `L` and a complex tensor `w`, the stored gradient is
//! `dL/dRe(w) + i dL/dIm(w)`, which is the steepest-ascent direction, and
//! cotangents flowing between layers use the same representation.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::{Dtype, Tensor2};

#[derive(Clone, Debug)]
pub struct LinearLayer {
    /// `fan_in x fan_out`.
    pub weight: Tensor2,
    /// `1 x fan_out`.
    pub bias: Tensor2,
    pub grad_weight: Tensor2,
    pub grad_bias: Tensor2,
    cached_input: Option<Tensor2>,
}

impl LinearLayer {
    pub fn new(weight: Tensor2, bias: Tensor2) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(Error::shape(
                "LinearLayer::new",
                format!("bias 1x{}", weight.cols()),
                format!("{}x{}", bias.rows(), bias.cols()),
            ));
        }
        if bias.dtype() != weight.dtype() {
            return Err(Error::dtype("LinearLayer::new", "weight and bias dtypes differ"));
        }
        let grad_weight = Tensor2::zeros(weight.rows(), weight.cols(), weight.dtype());
        let grad_bias = Tensor2::zeros(1, bias.cols(), bias.dtype());
        Ok(LinearLayer {
            weight,
            bias,
            grad_weight,
            grad_bias,
            cached_input: None,
        })
    }

    pub fn zeros(fan_in: usize, fan_out: usize, dtype: Dtype) -> Self {
        LinearLayer::new(
            Tensor2::zeros(fan_in, fan_out, dtype),
            Tensor2::zeros(1, fan_out, dtype),
        )
        .expect("consistent shapes")
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn dtype(&self) -> Dtype {
        self.weight.dtype()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.scalar_count() + self.bias.scalar_count()
    }

    pub fn has_cached_input(&self) -> bool {
        self.cached_input.is_some()
    }

    pub fn clear_cache(&mut self) {
        self.cached_input = None;
    }

    /// `input . W + b` without touching the cache.
    pub fn predict(&self, input: &Tensor2) -> Result<Tensor2> {
        if input.cols() != self.fan_in() {
            return Err(Error::shape(
                "linear_forward",
                format!("{} input columns", self.fan_in()),
                input.cols(),
            ));
        }
        Ok(match (&self.weight, &self.bias, input) {
            (Tensor2::Real(w), Tensor2::Real(b), Tensor2::Real(x)) => {
                let mut z = x.dot(w);
                z += b;
                Tensor2::Real(z)
            }
            (Tensor2::Complex(w), Tensor2::Complex(b), x) => {
                let x = match x {
                    Tensor2::Complex(x) => x.dot(w),
                    Tensor2::Real(x) => x.mapv(|v| Complex64::new(v, 0.0)).dot(w),
                };
                let mut z = x;
                z += b;
                Tensor2::Complex(z)
            }
            _ => {
                return Err(Error::dtype(
                    "linear_forward",
                    "complex input to a real layer",
                ))
            }
        })
    }

    /// Forward pass that keeps `input` for the following backward pass.
    pub fn forward(&mut self, input: Tensor2) -> Result<Tensor2> {
        let out = self.predict(&input)?;
        self.cached_input = Some(input);
        Ok(out)
    }

    /// Accumulates parameter gradients and returns the input cotangent.
    ///
    /// The cached input is consumed; a second backward without a fresh
    /// forward is a state error.
    pub fn backward(&mut self, grad_out: &Tensor2) -> Result<Tensor2> {
        let input = self.cached_input.take().ok_or_else(|| {
            Error::state("linear_backward", "backward called without a preceding forward")
        })?;
        if grad_out.cols() != self.fan_out() || grad_out.rows() != input.rows() {
            return Err(Error::shape(
                "linear_backward",
                format!("{}x{}", input.rows(), self.fan_out()),
                format!("{}x{}", grad_out.rows(), grad_out.cols()),
            ));
        }
        match (
            &self.weight,
            &mut self.grad_weight,
            &mut self.grad_bias,
            grad_out,
        ) {
            (Tensor2::Real(w), Tensor2::Real(gw), Tensor2::Real(gb), Tensor2::Real(g)) => {
                let x = input.real()?;
                general_mat_mul(1.0, &x.t(), g, 1.0, gw);
                *gb += &g.sum_axis(Axis(0)).insert_axis(Axis(0));
                Ok(Tensor2::Real(g.dot(&w.t())))
            }
            (Tensor2::Complex(w), Tensor2::Complex(gw), Tensor2::Complex(gb), g) => {
                let g = match g {
                    Tensor2::Complex(g) => g.clone(),
                    Tensor2::Real(g) => g.mapv(|v| Complex64::new(v, 0.0)),
                };
                let one = Complex64::new(1.0, 0.0);
                let x_conj = conj(&input.to_complex());
                general_mat_mul(one, &x_conj.t(), &g, one, gw);
                *gb += &g.sum_axis(Axis(0)).insert_axis(Axis(0));
                let grad_in = g.dot(&conj(w).t());
                Ok(match input {
                    Tensor2::Real(_) => Tensor2::Real(grad_in.mapv(|c| c.re)),
                    Tensor2::Complex(_) => Tensor2::Complex(grad_in),
                })
            }
            _ => Err(Error::dtype(
                "linear_backward",
                "complex cotangent for a real layer",
            )),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.fill_zero();
        self.grad_bias.fill_zero();
    }

    /// `(parameter, gradient)` pairs in a fixed order: weight, then bias.
    pub fn params_and_grads(&mut self) -> [(&mut Tensor2, &mut Tensor2); 2] {
        [
            (&mut self.weight, &mut self.grad_weight),
            (&mut self.bias, &mut self.grad_bias),
        ]
    }

    /// 2 FLOPs per multiply-accumulate; complex MACs cost 8 real FLOPs.
    pub fn flops_per_sample(&self) -> u64 {
        let macs = (self.fan_in() * self.fan_out()) as u64;
        match self.dtype() {
            Dtype::Real64 => 2 * macs,
            Dtype::Complex128 => 8 * macs,
        }
    }
}

fn conj(a: &Array2<Complex64>) -> Array2<Complex64> {
    a.mapv(|c| c.conj())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(w: &[Vec<f64>], b: &[f64]) -> LinearLayer {
        LinearLayer::new(
            Tensor2::from_rows(w).unwrap(),
            Tensor2::from_vec(1, b.len(), b.to_vec()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identity_weights() {
        let mut l = layer(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.0, 0.0]);
        let y = l.forward(Tensor2::from_rows(&[vec![3.0, 4.0]]).unwrap()).unwrap();
        assert_eq!(y.to_vec().unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn bias_only() {
        let l = layer(&[vec![0.0, 0.0], vec![0.0, 0.0]], &[1.0, 2.0]);
        let y = l
            .predict(&Tensor2::from_rows(&[vec![-5.0, 9.0], vec![0.3, 0.1]]).unwrap())
            .unwrap();
        assert_eq!(y.to_vec().unwrap(), vec![1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn hand_matmul() {
        let l = layer(&[vec![1.0, 2.0], vec![3.0, 4.0]], &[0.0, 0.0]);
        let y = l.predict(&Tensor2::from_rows(&[vec![1.0, 1.0]]).unwrap()).unwrap();
        assert_eq!(y.to_vec().unwrap(), vec![4.0, 6.0]);
    }

    #[test]
    fn shape_mismatch() {
        let l = layer(&[vec![1.0], vec![1.0]], &[0.0]);
        assert!(matches!(
            l.predict(&Tensor2::filled(1, 3, 1.0)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn backward_requires_forward() {
        let mut l = layer(&[vec![1.0]], &[0.0]);
        assert!(matches!(
            l.backward(&Tensor2::filled(1, 1, 1.0)),
            Err(Error::State { .. })
        ));
    }

    #[test]
    fn zero_cotangent_gives_zero_grads() {
        let mut l = layer(&[vec![1.0, 2.0], vec![3.0, 4.0]], &[0.5, 0.5]);
        l.forward(Tensor2::from_rows(&[vec![1.0, -2.0], vec![0.5, 0.25]]).unwrap())
            .unwrap();
        let gi = l.backward(&Tensor2::filled(2, 2, 0.0)).unwrap();
        assert!(gi.to_vec().unwrap().iter().all(|&v| v == 0.0));
        assert!(l.grad_weight.to_vec().unwrap().iter().all(|&v| v == 0.0));
        assert!(l.grad_bias.to_vec().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_chain_rule() {
        let mut l = layer(&[vec![2.5]], &[0.0]);
        l.forward(Tensor2::filled(1, 1, 1.75)).unwrap();
        let gi = l.backward(&Tensor2::filled(1, 1, -0.5)).unwrap();
        assert_eq!(l.grad_weight.to_vec().unwrap(), vec![1.75 * -0.5]);
        assert_eq!(l.grad_bias.to_vec().unwrap(), vec![-0.5]);
        assert_eq!(gi.to_vec().unwrap(), vec![2.5 * -0.5]);
    }

    #[test]
    fn complex_scalar_gradient_is_conjugate_input_times_cotangent() {
        let w = Tensor2::from_complex_vec(1, 1, vec![Complex64::new(0.3, -0.2)]).unwrap();
        let b = Tensor2::zeros(1, 1, Dtype::Complex128);
        let mut l = LinearLayer::new(w, b).unwrap();
        let x = Complex64::new(1.5, 0.5);
        let g = Complex64::new(-0.25, 2.0);
        l.forward(Tensor2::from_complex_vec(1, 1, vec![x]).unwrap())
            .unwrap();
        l.backward(&Tensor2::from_complex_vec(1, 1, vec![g]).unwrap())
            .unwrap();
        let gw = l.grad_weight.complex().unwrap()[[0, 0]];
        assert_eq!(gw, x.conj() * g);
    }
}
