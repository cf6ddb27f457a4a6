//! Dense row-major matrices: the single numeric container of the engine.
//!
//! A [`Tensor2`] is a batch of rows (one per coordinate) by a feature
//! dimension. It is either real (`f64`) or complex (`Complex64`); complex
//! storage only appears inside complex Gabor-wavelet networks.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Real64,
    Complex128,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Tensor2 {
    Real(Array2<f64>),
    Complex(Array2<Complex64>),
}

impl From<Array2<f64>> for Tensor2 {
    fn from(a: Array2<f64>) -> Self {
        Tensor2::Real(a)
    }
}

impl From<Array2<Complex64>> for Tensor2 {
    fn from(a: Array2<Complex64>) -> Self {
        Tensor2::Complex(a)
    }
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize, dtype: Dtype) -> Self {
        match dtype {
            Dtype::Real64 => Tensor2::Real(Array2::zeros((rows, cols))),
            Dtype::Complex128 => Tensor2::Complex(Array2::zeros((rows, cols))),
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor2::Real(Array2::from_elem((rows, cols), value))
    }

    /// Builds a real tensor from row-major data.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Tensor2::from_vec",
                format!("{} elements ({rows}x{cols})", rows * cols),
                data.len(),
            ));
        }
        Ok(Tensor2::Real(
            Array2::from_shape_vec((rows, cols), data).expect("length checked"),
        ))
    }

    pub fn from_complex_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Tensor2::from_complex_vec",
                format!("{} elements ({rows}x{cols})", rows * cols),
                data.len(),
            ));
        }
        Ok(Tensor2::Complex(
            Array2::from_shape_vec((rows, cols), data).expect("length checked"),
        ))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(
                    "Tensor2::from_rows",
                    format!("{cols} columns"),
                    format!("{} in row {i}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Tensor2::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        match self {
            Tensor2::Real(a) => a.nrows(),
            Tensor2::Complex(a) => a.nrows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Tensor2::Real(a) => a.ncols(),
            Tensor2::Complex(a) => a.ncols(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn len(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            Tensor2::Real(_) => Dtype::Real64,
            Tensor2::Complex(_) => Dtype::Complex128,
        }
    }

    /// Number of real scalars stored (complex entries count twice).
    pub fn scalar_count(&self) -> usize {
        match self {
            Tensor2::Real(a) => a.len(),
            Tensor2::Complex(a) => 2 * a.len(),
        }
    }

    pub fn real(&self) -> Result<&Array2<f64>> {
        match self {
            Tensor2::Real(a) => Ok(a),
            Tensor2::Complex(_) => Err(Error::dtype("Tensor2::real", "expected real tensor")),
        }
    }

    pub fn real_mut(&mut self) -> Result<&mut Array2<f64>> {
        match self {
            Tensor2::Real(a) => Ok(a),
            Tensor2::Complex(_) => Err(Error::dtype("Tensor2::real_mut", "expected real tensor")),
        }
    }

    pub fn into_real(self) -> Result<Array2<f64>> {
        match self {
            Tensor2::Real(a) => Ok(a),
            Tensor2::Complex(_) => Err(Error::dtype("Tensor2::into_real", "expected real tensor")),
        }
    }

    pub fn complex(&self) -> Result<&Array2<Complex64>> {
        match self {
            Tensor2::Complex(a) => Ok(a),
            Tensor2::Real(_) => Err(Error::dtype("Tensor2::complex", "expected complex tensor")),
        }
    }

    /// Real part of a complex tensor, or a copy of a real one.
    pub fn real_part(&self) -> Array2<f64> {
        match self {
            Tensor2::Real(a) => a.clone(),
            Tensor2::Complex(a) => a.mapv(|c| c.re),
        }
    }

    /// Complex view of the data, promoting real entries to `x + 0i`.
    pub fn to_complex(&self) -> Array2<Complex64> {
        match self {
            Tensor2::Real(a) => a.mapv(|x| Complex64::new(x, 0.0)),
            Tensor2::Complex(a) => a.clone(),
        }
    }

    /// Row-major copy of the real data.
    pub fn to_vec(&self) -> Result<Vec<f64>> {
        let a = self.real()?;
        Ok(a.iter().copied().collect())
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Tensor2::Real(a) => a.iter().all(|x| x.is_finite()),
            Tensor2::Complex(a) => a.iter().all(|c| c.re.is_finite() && c.im.is_finite()),
        }
    }

    pub fn fill_zero(&mut self) {
        match self {
            Tensor2::Real(a) => a.fill(0.0),
            Tensor2::Complex(a) => a.fill(Complex64::new(0.0, 0.0)),
        }
    }

    /// Rows `start..end` as an owned tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor2 {
        match self {
            Tensor2::Real(a) => Tensor2::Real(a.slice(s![start..end, ..]).to_owned()),
            Tensor2::Complex(a) => Tensor2::Complex(a.slice(s![start..end, ..]).to_owned()),
        }
    }

    /// Gathers the given rows in order.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor2 {
        match self {
            Tensor2::Real(a) => Tensor2::Real(a.select(Axis(0), idx)),
            Tensor2::Complex(a) => Tensor2::Complex(a.select(Axis(0), idx)),
        }
    }

    /// Stacks row blocks vertically; all parts must share dtype and width.
    pub fn vstack(parts: &[Tensor2]) -> Result<Tensor2> {
        let first = parts
            .first()
            .ok_or_else(|| Error::domain("Tensor2::vstack", "no parts"))?;
        let views: Vec<ArrayView2<f64>> = parts
            .iter()
            .map(|p| p.real().map(|a| a.view()))
            .collect::<Result<_>>()?;
        concatenate(Axis(0), &views)
            .map(Tensor2::Real)
            .map_err(|_| Error::shape("Tensor2::vstack", first.cols(), "ragged widths"))
    }

    /// Concatenates real tensors along the feature axis.
    pub fn hstack(parts: &[&Tensor2]) -> Result<Tensor2> {
        let rows = parts.first().map_or(0, |p| p.rows());
        for p in parts {
            if p.rows() != rows {
                return Err(Error::shape("Tensor2::hstack", format!("{rows} rows"), p.rows()));
            }
        }
        let views: Vec<ArrayView2<f64>> = parts
            .iter()
            .map(|p| p.real().map(|a| a.view()))
            .collect::<Result<_>>()?;
        concatenate(Axis(1), &views)
            .map(Tensor2::Real)
            .map_err(|e| Error::shape("Tensor2::hstack", "compatible parts", e.to_string()))
    }

    /// Splits a real tensor's columns at `at`.
    pub fn split_cols(&self, at: usize) -> Result<(Tensor2, Tensor2)> {
        let a = self.real()?;
        if at > a.ncols() {
            return Err(Error::shape("Tensor2::split_cols", format!("<= {}", a.ncols()), at));
        }
        Ok((
            Tensor2::Real(a.slice(s![.., ..at]).to_owned()),
            Tensor2::Real(a.slice(s![.., at..]).to_owned()),
        ))
    }

    pub fn ensure_shape(&self, op: &'static str, rows: usize, cols: usize) -> Result<()> {
        if self.shape() != (rows, cols) {
            return Err(Error::shape(
                op,
                format!("{rows}x{cols}"),
                format!("{}x{}", self.rows(), self.cols()),
            ));
        }
        Ok(())
    }
}

/// Elementwise `a * x + b * y` over two equally-shaped real arrays.
pub(crate) fn axpby(a: f64, x: &Array2<f64>, b: f64, y: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    Zip::from(&mut out)
        .and(x)
        .and(y)
        .for_each(|o, &xv, &yv| *o = a * xv + b * yv);
    out
}

pub(crate) fn check_same_shape(op: &'static str, a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(
            op,
            format!("{}x{}", a.nrows(), a.ncols()),
            format!("{}x{}", b.nrows(), b.ncols()),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor2::from_vec(2, 3, vec![0.0; 5]).is_err());
        let t = Tensor2::from_vec(2, 3, vec![0.0; 6]).unwrap();
        assert_eq!(t.len(), 6);
        assert_eq!(t.shape(), (2, 3));
    }

    #[test]
    fn hstack_and_split_are_inverse() {
        let a = Tensor2::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor2::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let c = Tensor2::hstack(&[&a, &b]).unwrap();
        assert_eq!(c.to_vec().unwrap(), vec![1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let (l, r) = c.split_cols(2).unwrap();
        assert_eq!(l, a);
        assert_eq!(r, b);
    }

    #[test]
    fn hstack_rejects_row_mismatch() {
        let a = Tensor2::zeros(2, 1, Dtype::Real64);
        let b = Tensor2::zeros(3, 1, Dtype::Real64);
        assert!(Tensor2::hstack(&[&a, &b]).is_err());
    }

    #[test]
    fn complex_counts_twice() {
        let t = Tensor2::zeros(2, 2, Dtype::Complex128);
        assert_eq!(t.scalar_count(), 8);
        assert!(t.real().is_err());
    }
}
