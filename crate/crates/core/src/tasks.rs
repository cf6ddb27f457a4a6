//! Signal tasks: coordinates and targets for fitting, super-resolution,
//! denoising and 3-D occupancy.
//!
//! Grid coordinates use pixel centers, `(2i + 1) / N - 1`, per axis.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{box_downsample, ImageBuffer};
use crate::rng::Rng;
use crate::tensor::Tensor2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    Fit,
    SuperRes { scale: usize },
    Denoise,
    Occupancy,
}

#[derive(Clone, Debug)]
pub struct SignalTask {
    pub kind: TaskKind,
    pub train_coords: Tensor2,
    pub train_target: Tensor2,
    /// Grid dims of the training coordinates (`[height, width]` or
    /// `[nx, ny, nz]`), `None` for scattered samples.
    pub train_grid: Option<Vec<usize>>,
    pub eval_coords: Tensor2,
    pub eval_target: Tensor2,
    pub eval_grid: Vec<usize>,
    pub channels: usize,
    pub coord_dim: usize,
}

impl SignalTask {
    pub fn is_image(&self) -> bool {
        self.coord_dim == 2
    }

    /// Base resolution for the model's latent field.
    pub fn latent_resolution(&self) -> Vec<usize> {
        self.train_grid
            .clone()
            .unwrap_or_else(|| vec![OCCUPANCY_LATENT_RES; self.coord_dim])
    }
}

/// Latent grid resolution per axis for scattered (occupancy) training sets.
pub const OCCUPANCY_LATENT_RES: usize = 32;

/// Pixel-center coordinate of index `i` on an axis of `n` cells.
pub fn pixel_center(i: usize, n: usize) -> f64 {
    (2 * i + 1) as f64 / n as f64 - 1.0
}

/// Row-major pixel-center grid; the last dim varies fastest and maps to
/// the first coordinate column for images (`x` across, `y` down).
pub fn grid_coords(dims: &[usize]) -> Tensor2 {
    let rows: usize = dims.iter().product();
    let d = dims.len();
    let mut data = Vec::with_capacity(rows * d);
    let mut idx = vec![0usize; d];
    for r in 0..rows {
        crate::iinr::latent::unravel(r, dims, &mut idx);
        // reverse so coordinate 0 follows the fastest axis
        for a in (0..d).rev() {
            data.push(pixel_center(idx[a], dims[a]));
        }
    }
    Tensor2::from_vec(rows, d, data).expect("exact length")
}

fn image_tensor(img: &ImageBuffer) -> Tensor2 {
    Tensor2::from_vec(img.pixels(), img.channels, img.data.clone()).expect("consistent image")
}

pub fn image_from_tensor(t: &Tensor2, height: usize, width: usize) -> Result<ImageBuffer> {
    ImageBuffer::new(width, height, t.cols(), t.to_vec()?)
}

pub fn make_fit_task(image: &ImageBuffer) -> Result<SignalTask> {
    if image.pixels() == 0 {
        return Err(Error::domain("make_fit_task", "empty image"));
    }
    let dims = vec![image.height, image.width];
    let coords = grid_coords(&dims);
    let target = image_tensor(image);
    Ok(SignalTask {
        kind: TaskKind::Fit,
        train_coords: coords.clone(),
        train_target: target.clone(),
        train_grid: Some(dims.clone()),
        eval_coords: coords,
        eval_target: target,
        eval_grid: dims,
        channels: image.channels,
        coord_dim: 2,
    })
}

/// Trains on the `scale`-times box-downsampled image; evaluates on the
/// full-resolution grid against the original.
pub fn make_sr_task(image: &ImageBuffer, scale: usize) -> Result<SignalTask> {
    if scale < 2 {
        return Err(Error::domain("make_sr_task", format!("scale must be >= 2, got {scale}")));
    }
    let low = box_downsample(image, scale)?;
    let train_dims = vec![low.height, low.width];
    let eval_dims = vec![image.height, image.width];
    Ok(SignalTask {
        kind: TaskKind::SuperRes { scale },
        train_coords: grid_coords(&train_dims),
        train_target: image_tensor(&low),
        train_grid: Some(train_dims),
        eval_coords: grid_coords(&eval_dims),
        eval_target: image_tensor(image),
        eval_grid: eval_dims,
        channels: image.channels,
        coord_dim: 2,
    })
}

pub const DEFAULT_MAX_PHOTONS: f64 = 30.0;
pub const DEFAULT_READOUT: f64 = 2.0;

/// Photon-limited sensor model applied per value:
/// `max(0, (Poisson(v * max_photons) + N(0, readout)) / max_photons)`.
pub fn corrupt_poisson(
    image: &ImageBuffer,
    rng: &mut Rng,
    max_photons: f64,
    readout: f64,
) -> Result<ImageBuffer> {
    if !(max_photons > 0.0) || !(readout >= 0.0) {
        return Err(Error::domain(
            "make_denoise_task",
            format!("max_photons {max_photons} must be > 0 and readout {readout} >= 0"),
        ));
    }
    let mut data = Vec::with_capacity(image.data.len());
    for &v in &image.data {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::domain("make_denoise_task", format!("pixel value {v} outside [0, 1]")));
        }
        let photons = rng.poisson(v * max_photons)? as f64;
        let noisy = (photons + readout * rng.standard_normal()) / max_photons;
        data.push(noisy.max(0.0));
    }
    ImageBuffer::new(image.width, image.height, image.channels, data)
}

/// Trains on a noisy copy; evaluates against the clean image.
pub fn make_denoise_task(
    image: &ImageBuffer,
    rng: &mut Rng,
    max_photons: f64,
    readout: f64,
) -> Result<SignalTask> {
    let noisy = corrupt_poisson(image, rng, max_photons, readout)?;
    let mut task = make_fit_task(image)?;
    task.kind = TaskKind::Denoise;
    task.train_target = image_tensor(&noisy);
    Ok(task)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OccupancyShape {
    Sphere { radius: f64 },
    Torus { major: f64, minor: f64 },
    Box { half_extents: [f64; 3] },
    VoxelGrid(VoxelGrid),
}

impl OccupancyShape {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            OccupancyShape::Sphere { radius } => *radius > 0.0 && *radius <= 1.0,
            OccupancyShape::Torus { major, minor } => {
                *minor > 0.0 && *major > *minor && major + minor <= 1.0
            }
            OccupancyShape::Box { half_extents } => {
                half_extents.iter().all(|&h| h > 0.0 && h <= 1.0)
            }
            OccupancyShape::VoxelGrid(_) => true,
        };
        if !ok {
            return Err(Error::Config(format!("{self:?} does not fit inside [-1, 1]^3")));
        }
        Ok(())
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let [x, y, z] = p;
        match self {
            OccupancyShape::Sphere { radius } => x * x + y * y + z * z <= radius * radius,
            OccupancyShape::Torus { major, minor } => {
                let q = (x * x + y * y).sqrt() - major;
                q * q + z * z <= minor * minor
            }
            OccupancyShape::Box { half_extents } => {
                x.abs() <= half_extents[0] && y.abs() <= half_extents[1] && z.abs() <= half_extents[2]
            }
            OccupancyShape::VoxelGrid(g) => g.contains(p),
        }
    }

    fn label(&self, p: [f64; 3]) -> f64 {
        if self.contains(p) {
            1.0
        } else {
            0.0
        }
    }
}

/// Binary occupancy grid over `[-1, 1]^3`, cells indexed `(ix * ny + iy) * nz + iz`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub bits: Vec<bool>,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], bits: Vec<bool>) -> Result<Self> {
        if dims.contains(&0) || bits.len() != dims.iter().product::<usize>() {
            return Err(Error::shape(
                "VoxelGrid::new",
                dims.iter().product::<usize>(),
                bits.len(),
            ));
        }
        Ok(VoxelGrid { dims, bits })
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            if !(-1.0..=1.0).contains(&p[a]) {
                return false;
            }
            let n = self.dims[a];
            idx[a] = (((p[a] + 1.0) / 2.0 * n as f64).floor() as usize).min(n - 1);
        }
        self.bits[(idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]]
    }

    /// `VOX <nx> <ny> <nz>\n` followed by the row-major bitset packed
    /// LSB-first into bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let [nx, ny, nz] = self.dims;
        let mut out = format!("VOX {nx} {ny} {nz}\n").into_bytes();
        let mut packed = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, &b) in self.bits.iter().enumerate() {
            if b {
                packed[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend(packed);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or(Error::Parse {
            offset: 0,
            detail: "missing header line".into(),
        })?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::Parse {
            offset: 0,
            detail: "header is not UTF-8".into(),
        })?;
        let mut parts = header.split_ascii_whitespace();
        if parts.next() != Some("VOX") {
            return Err(Error::Parse {
                offset: 0,
                detail: "expected 'VOX' magic".into(),
            });
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = parts.next().and_then(|s| s.parse().ok()).ok_or(Error::Parse {
                offset: 4,
                detail: "expected three grid dimensions".into(),
            })?;
        }
        let n: usize = dims.iter().product();
        let payload = &bytes[nl + 1..];
        let need = n.div_ceil(8);
        if payload.len() < need {
            return Err(Error::Parse {
                offset: nl + 1,
                detail: format!("truncated payload: expected {need} bytes, found {}", payload.len()),
            });
        }
        let bits = (0..n).map(|i| payload[i / 8] >> (i % 8) & 1 == 1).collect();
        VoxelGrid::new(dims, bits)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        VoxelGrid::from_bytes(&bytes)
    }
}

/// Occupancy task: `train_samples` stratified random points with binary
/// labels, evaluated on a regular `eval_grid^3` lattice.
pub fn make_occupancy_task(
    shape: &OccupancyShape,
    train_samples: usize,
    eval_grid: usize,
    rng: &mut Rng,
) -> Result<SignalTask> {
    shape.validate()?;
    if train_samples == 0 || eval_grid == 0 {
        return Err(Error::domain("make_occupancy_task", "sample counts must be >= 1"));
    }
    // cells per axis so that every sample gets its own stratum where possible
    let k = ((train_samples as f64).cbrt().round() as usize).max(1);
    let cells = k * k * k;
    let mut coords = Vec::with_capacity(train_samples * 3);
    let mut labels = Vec::with_capacity(train_samples);
    let cell = 2.0 / k as f64;
    for i in 0..train_samples {
        let c = i % cells;
        let (ix, iy, iz) = (c / (k * k), (c / k) % k, c % k);
        let p = [
            -1.0 + cell * (ix as f64 + rng.uniform()),
            -1.0 + cell * (iy as f64 + rng.uniform()),
            -1.0 + cell * (iz as f64 + rng.uniform()),
        ];
        coords.extend_from_slice(&p);
        labels.push(shape.label(p));
    }
    let dims = vec![eval_grid; 3];
    let eval_coords = grid_coords(&dims);
    let eval_labels: Vec<f64> = eval_coords
        .real()?
        .rows()
        .into_iter()
        .map(|r| shape.label([r[0], r[1], r[2]]))
        .collect();
    Ok(SignalTask {
        kind: TaskKind::Occupancy,
        train_coords: Tensor2::from_vec(train_samples, 3, coords)?,
        train_target: Tensor2::from_vec(train_samples, 1, labels)?,
        train_grid: None,
        eval_target: Tensor2::from_vec(eval_coords.rows(), 1, eval_labels)?,
        eval_coords,
        eval_grid: dims,
        channels: 1,
        coord_dim: 3,
    })
}
