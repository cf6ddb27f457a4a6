//! Seeded random streams.
//!
//! Every stochastic quantity (initial weights, the latent field, training
//! times and perturbations, simulated sensor noise) is drawn from an [`Rng`]
//! so that a seed fully determines a run.

use ndarray::Array2;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream, keyed by `stream`.
    pub fn fork(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Rng {
            seed: self.seed,
            inner,
        }
    }

    /// Uniform sample in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.standard_normal()
    }

    /// `rows x cols` tensor of i.i.d. standard normal entries.
    pub fn gaussian(&mut self, rows: usize, cols: usize) -> Tensor2 {
        let data: Vec<f64> = (0..rows * cols).map(|_| self.standard_normal()).collect();
        Tensor2::Real(Array2::from_shape_vec((rows, cols), data).expect("exact length"))
    }

    /// Poisson draw with rate `lambda`.
    pub fn poisson(&mut self, lambda: f64) -> Result<u64> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::domain(
                "poisson",
                format!("rate must be finite and nonnegative, got {lambda}"),
            ));
        }
        if lambda == 0.0 {
            return Ok(0);
        }
        let dist = Poisson::new(lambda).map_err(|e| Error::domain("poisson", e.to_string()))?;
        Ok(self.inner.sample(dist) as u64)
    }

    /// Fisher-Yates shuffled prefix: `k` distinct indices from `0..n`.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        let k = k.min(n);
        for i in 0..k {
            let j = i + self.index(n - i);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}
