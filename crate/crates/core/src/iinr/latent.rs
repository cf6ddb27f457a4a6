//! The fixed initial state `Z` that reconstruction starts from.
//!
//! A Gaussian latent is drawn once on a base grid from its seed. Queries on
//! that same grid return the stored values; other grids and scattered
//! points are multilinearly interpolated under the pixel-center convention.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentMode {
    GaussianNoise,
    Ones,
    Zeros,
}

impl std::str::FromStr for LatentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" | "gaussian" | "gaussian_noise" => Ok(LatentMode::GaussianNoise),
            "ones" => Ok(LatentMode::Ones),
            "zeros" => Ok(LatentMode::Zeros),
            other => Err(Error::Config(format!("unknown latent mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentField {
    pub mode: LatentMode,
    pub seed: u64,
    pub base_resolution: Vec<usize>,
    pub channels: usize,
    /// Base-grid values, `prod(base_resolution) x channels`, row-major grid order.
    values: Option<Array2<f64>>,
}

impl LatentField {
    pub fn new(
        mode: LatentMode,
        seed: u64,
        base_resolution: Vec<usize>,
        channels: usize,
    ) -> Result<Self> {
        if base_resolution.is_empty() || base_resolution.contains(&0) || channels == 0 {
            return Err(Error::Config(format!(
                "latent grid {base_resolution:?} with {channels} channels is empty"
            )));
        }
        let values = match mode {
            LatentMode::GaussianNoise => {
                let n: usize = base_resolution.iter().product();
                Some(Rng::new(seed).gaussian(n, channels).into_real()?)
            }
            _ => None,
        };
        Ok(LatentField {
            mode,
            seed,
            base_resolution,
            channels,
            values,
        })
    }

    fn constant(&self, rows: usize) -> Option<Tensor2> {
        match self.mode {
            LatentMode::Ones => Some(Tensor2::filled(rows, self.channels, 1.0)),
            LatentMode::Zeros => Some(Tensor2::filled(rows, self.channels, 0.0)),
            LatentMode::GaussianNoise => None,
        }
    }

    /// Field sampled at every node of a pixel-center grid of `dims`.
    pub fn sample_grid(&self, dims: &[usize]) -> Result<Tensor2> {
        let rows: usize = dims.iter().product();
        if let Some(c) = self.constant(rows) {
            return Ok(c);
        }
        let base = self.values.as_ref().expect("gaussian latent has values");
        if dims == self.base_resolution.as_slice() {
            return Ok(Tensor2::Real(base.clone()));
        }
        if dims.len() != self.base_resolution.len() {
            return Err(Error::shape(
                "sample_latent",
                format!("{}-d grid", self.base_resolution.len()),
                format!("{}-d grid", dims.len()),
            ));
        }
        let d = dims.len();
        let mut out = Array2::zeros((rows, self.channels));
        let mut idx = vec![0usize; d];
        let mut pos = vec![0f64; d];
        for r in 0..rows {
            unravel(r, dims, &mut idx);
            for a in 0..d {
                // base-grid index of the query's pixel center
                let n_out = dims[a] as f64;
                let n_base = self.base_resolution[a] as f64;
                pos[a] = ((2 * idx[a] + 1) as f64 * n_base - n_out) / (2.0 * n_out);
            }
            self.interpolate_into(base, &pos, out.row_mut(r).as_slice_mut().expect("row-major"));
        }
        Ok(Tensor2::Real(out))
    }

    /// Field sampled at scattered coordinates in `[-1, 1]^d`.
    pub fn sample_at(&self, coords: &Tensor2) -> Result<Tensor2> {
        if let Some(c) = self.constant(coords.rows()) {
            return Ok(c);
        }
        let d = self.base_resolution.len();
        if coords.cols() != d {
            return Err(Error::shape("sample_latent", d, coords.cols()));
        }
        let base = self.values.as_ref().expect("gaussian latent has values");
        let x = coords.real()?;
        let mut out = Array2::zeros((coords.rows(), self.channels));
        let mut pos = vec![0f64; d];
        for (r, row) in x.rows().into_iter().enumerate() {
            for a in 0..d {
                pos[a] = ((row[a] + 1.0) * self.base_resolution[a] as f64 - 1.0) / 2.0;
            }
            self.interpolate_into(base, &pos, out.row_mut(r).as_slice_mut().expect("row-major"));
        }
        Ok(Tensor2::Real(out))
    }

    /// Multilinear interpolation at continuous base index `pos` (clamped).
    fn interpolate_into(&self, base: &Array2<f64>, pos: &[f64], out: &mut [f64]) {
        let d = pos.len();
        let dims = &self.base_resolution;
        let mut lo = vec![0usize; d];
        let mut frac = vec![0f64; d];
        for a in 0..d {
            let p = pos[a].clamp(0.0, (dims[a] - 1) as f64);
            let f = p.floor();
            lo[a] = (f as usize).min(dims[a] - 1);
            frac[a] = p - f;
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut corner = vec![0usize; d];
        for mask in 0..(1usize << d) {
            let mut w = 1.0;
            for a in 0..d {
                let hi = mask >> a & 1 == 1;
                if hi {
                    w *= frac[a];
                    corner[a] = (lo[a] + 1).min(dims[a] - 1);
                } else {
                    w *= 1.0 - frac[a];
                    corner[a] = lo[a];
                }
            }
            if w == 0.0 {
                continue;
            }
            let row = ravel(&corner, dims);
            for (o, &v) in out.iter_mut().zip(base.row(row)) {
                *o += w * v;
            }
        }
    }
}

pub(crate) fn unravel(mut r: usize, dims: &[usize], idx: &mut [usize]) {
    for a in (0..dims.len()).rev() {
        idx[a] = r % dims[a];
        r /= dims[a];
    }
}

pub(crate) fn ravel(idx: &[usize], dims: &[usize]) -> usize {
    idx.iter().zip(dims).fold(0, |acc, (&i, &n)| acc * n + i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_modes() {
        let zeros = LatentField::new(LatentMode::Zeros, 0, vec![4, 4], 3).unwrap();
        assert!(zeros.sample_grid(&[4, 4]).unwrap().to_vec().unwrap().iter().all(|&v| v == 0.0));
        let ones = LatentField::new(LatentMode::Ones, 0, vec![4, 4], 3).unwrap();
        assert!(ones.sample_grid(&[8, 8]).unwrap().to_vec().unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn gaussian_is_fixed() {
        let z = LatentField::new(LatentMode::GaussianNoise, 5, vec![6, 5], 2).unwrap();
        let a = z.sample_grid(&[6, 5]).unwrap();
        let b = z.sample_grid(&[6, 5]).unwrap();
        assert_eq!(a, b);
        let again = LatentField::new(LatentMode::GaussianNoise, 5, vec![6, 5], 2).unwrap();
        assert_eq!(again.sample_grid(&[6, 5]).unwrap(), a);
    }

    #[test]
    fn upsampled_grid_stays_within_base_range() {
        let z = LatentField::new(LatentMode::GaussianNoise, 5, vec![4, 4], 1).unwrap();
        let base = z.sample_grid(&[4, 4]).unwrap().to_vec().unwrap();
        let (lo, hi) = base.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        let up = z.sample_grid(&[8, 8]).unwrap().to_vec().unwrap();
        assert_eq!(up.len(), 64);
        assert!(up.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn scattered_query_hits_nodes() {
        let z = LatentField::new(LatentMode::GaussianNoise, 5, vec![2, 2, 2], 1).unwrap();
        let base = z.sample_grid(&[2, 2, 2]).unwrap().to_vec().unwrap();
        // pixel centers of a 2-cell axis are at -0.5 and 0.5
        let coords = Tensor2::from_rows(&[vec![-0.5, -0.5, -0.5], vec![0.5, 0.5, 0.5]]).unwrap();
        let v = z.sample_at(&coords).unwrap().to_vec().unwrap();
        assert!((v[0] - base[0]).abs() < 1e-12);
        assert!((v[1] - base[7]).abs() < 1e-12);
    }

    #[test]
    fn ravel_unravel() {
        let dims = [3, 4, 5];
        let mut idx = [0; 3];
        for r in 0..60 {
            unravel(r, &dims, &mut idx);
            assert_eq!(ravel(&idx, &dims), r);
        }
    }
}
