//! Python bindings: models, reconstruction, metrics, image I/O and the
//! experiment runner. Matrices cross the boundary as lists of rows.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use iinr::harness::{self, ExperimentConfig};
use iinr::iinr::model::Fusion;
use iinr::iinr::reconstruct::reconstruct;
use iinr::{Activation, Checkpoint, Error, MlpSpec, Tensor2};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn tensor(rows: Vec<Vec<f64>>) -> PyResult<Tensor2> {
    Tensor2::from_rows(&rows).map_err(to_py)
}

fn rows(t: &Tensor2) -> PyResult<Vec<Vec<f64>>> {
    Ok(t.real().map_err(to_py)?.rows().into_iter().map(|r| r.to_vec()).collect())
}

fn activation(name: &str, omega: Option<f64>, sigma: Option<f64>) -> PyResult<Activation> {
    let need = |v: Option<f64>, what: &str| {
        v.ok_or_else(|| PyValueError::new_err(format!("{name} needs {what}")))
    };
    let act = match name {
        "siren" | "sine" => Activation::Sine { omega: need(omega, "omega")? },
        "gauss" => Activation::Gauss { sigma: need(sigma, "sigma")? },
        "wire" | "gabor" => Activation::GaborWavelet {
            omega: need(omega, "omega")?,
            sigma: need(sigma, "sigma")?,
        },
        "relu" => Activation::Relu,
        other => return Err(PyValueError::new_err(format!("unknown activation '{other}'"))),
    };
    act.validate().map_err(to_py)?;
    Ok(act)
}

/// An iterative INR: backbone plus FeedbackNet and FuseNet.
#[pyclass(name = "IinrModel")]
struct PyIinrModel {
    inner: iinr::IinrModel,
}

#[pymethods]
impl PyIinrModel {
    #[new]
    #[pyo3(signature = (in_dim, out_dim, width, hidden_layers, activation_name="siren", omega=None, sigma=None, latent_resolution=vec![64, 64], fusion="multiplicative", seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        in_dim: usize,
        out_dim: usize,
        width: usize,
        hidden_layers: usize,
        activation_name: &str,
        omega: Option<f64>,
        sigma: Option<f64>,
        latent_resolution: Vec<usize>,
        fusion: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let act = activation(activation_name, omega, sigma)?;
        let mut spec = iinr::IinrSpec::around(
            MlpSpec::new(in_dim, out_dim, width, hidden_layers, act),
            latent_resolution,
        );
        spec.fusion = fusion.parse::<Fusion>().map_err(to_py)?;
        let inner = iinr::IinrModel::init(spec, seed).map_err(to_py)?;
        Ok(PyIinrModel { inner })
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    #[getter]
    fn backbone_parameter_count(&self) -> usize {
        self.inner.backbone.parameter_count()
    }

    #[getter]
    fn added_parameter_count(&self) -> usize {
        self.inner.spec.added_parameter_count()
    }

    /// Backbone passes counted since construction or the last reset.
    #[getter]
    fn backbone_passes(&self) -> u64 {
        self.inner.counters.backbone_passes()
    }

    /// `f(state, x, t)` for one time index.
    fn forward(&self, coords: Vec<Vec<f64>>, state: Vec<Vec<f64>>, t: f64) -> PyResult<Vec<Vec<f64>>> {
        let out = self
            .inner
            .forward(&tensor(coords)?, &tensor(state)?, t)
            .map_err(to_py)?;
        rows(&out)
    }

    /// Runs `steps` refinement steps from the model's latent field (or `init`).
    #[pyo3(signature = (coords, steps=2, init=None))]
    fn reconstruct(
        &self,
        coords: Vec<Vec<f64>>,
        steps: usize,
        init: Option<Vec<Vec<f64>>>,
    ) -> PyResult<Vec<Vec<f64>>> {
        let x = tensor(coords)?;
        let z = match init {
            Some(z) => tensor(z)?,
            None => self.inner.latent.sample_at(&x).map_err(to_py)?,
        };
        rows(&reconstruct(&self.inner, &x, &z, steps).map_err(to_py)?)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        Checkpoint::Iinr(self.inner.clone()).write(path).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        match Checkpoint::read(path).map_err(to_py)? {
            Checkpoint::Iinr(inner) => Ok(PyIinrModel { inner }),
            Checkpoint::Mlp(_) => Err(PyValueError::new_err("checkpoint holds a baseline MLP")),
        }
    }
}

/// Peak signal-to-noise ratio in dB (peak 1, capped at 100).
#[pyfunction]
fn psnr(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    iinr::metrics::psnr(&tensor(a)?, &tensor(b)?).map_err(to_py)
}

/// Mean SSIM of two images given as `height*width` rows of channels.
#[pyfunction]
fn ssim(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, height: usize, width: usize) -> PyResult<f64> {
    iinr::metrics::ssim(&tensor(a)?, &tensor(b)?, height, width).map_err(to_py)
}

/// `(width, height, channels, data)` with data in `[0, 1]`, row-major.
#[pyfunction]
fn read_image(path: &str) -> PyResult<(usize, usize, usize, Vec<f64>)> {
    let img = iinr::imageio::read_image(path).map_err(to_py)?;
    Ok((img.width, img.height, img.channels, img.data))
}

#[pyfunction]
fn write_image(path: &str, width: usize, height: usize, channels: usize, data: Vec<f64>) -> PyResult<()> {
    let img = iinr::ImageBuffer::new(width, height, channels, data).map_err(to_py)?;
    iinr::imageio::write_image(path, &img).map_err(to_py)
}

/// Runs an experiment from a JSON config (same fields as the CLI's
/// `--config`) and returns the run records as JSON strings.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<Vec<String>> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(to_py)?;
    let records = py
        .detach(|| harness::run_experiment(&cfg))
        .map_err(to_py)?;
    records.iter().map(|r| r.to_json().map_err(to_py)).collect()
}

#[pymodule]
fn pyiinr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyIinrModel>()?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(read_image, m)?)?;
    m.add_function(wrap_pyfunction!(write_image, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
