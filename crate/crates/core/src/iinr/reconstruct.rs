//! Iterative reconstruction from the latent state.
//!
//! Starting at `g_1 = Z`, each step moves from `t` to `t - delta`:
//!
//! ```text
//! g_{t-delta} = (delta / t) * f(g_t, x, t) + (1 - delta / t) * g_t
//! ```
//!
//! with `delta = 1 / steps`. The backbone is evaluated once per call and its
//! features reused by every step.

use ndarray::Zip;

use crate::error::{Error, Result};
use crate::iinr::model::IinrModel;
use crate::tensor::Tensor2;

/// A conditional-mean estimator split into a per-call feature pass and a
/// cheap per-step refinement.
pub trait Refiner {
    type Features;

    fn features(&self, coords: &Tensor2) -> Result<Self::Features>;

    fn refine(
        &self,
        coords: &Tensor2,
        features: &Self::Features,
        state: &Tensor2,
        t: f64,
    ) -> Result<Tensor2>;
}

impl Refiner for IinrModel {
    type Features = Tensor2;

    fn features(&self, coords: &Tensor2) -> Result<Tensor2> {
        self.backbone_features(coords)
    }

    fn refine(&self, coords: &Tensor2, b: &Tensor2, state: &Tensor2, t: f64) -> Result<Tensor2> {
        IinrModel::refine(self, coords, b, state, t)
    }
}

/// Time index at the start of step `k` (0-based): `(steps - k) / steps`.
pub fn step_time(steps: usize, k: usize) -> f64 {
    (steps - k) as f64 / steps as f64
}

/// `delta / t` at step `k`, i.e. `1 / (steps - k)`.
pub fn step_weight(steps: usize, k: usize) -> f64 {
    1.0 / (steps - k) as f64
}

/// One state update. The last step (weight 1) returns the estimate itself.
pub fn blend(estimate: Tensor2, state: &Tensor2, weight: f64) -> Result<Tensor2> {
    if weight == 1.0 {
        return Ok(estimate);
    }
    let mut out = estimate.into_real()?;
    let s = state.real()?;
    crate::tensor::check_same_shape("reconstruct", &out, s)?;
    Zip::from(&mut out)
        .and(s)
        .for_each(|o, &g| *o = weight * *o + (1.0 - weight) * g);
    Ok(Tensor2::Real(out))
}

/// Runs `steps` refinement steps from `init` at `coords`.
pub fn reconstruct<R: Refiner>(
    model: &R,
    coords: &Tensor2,
    init: &Tensor2,
    steps: usize,
) -> Result<Tensor2> {
    if steps == 0 {
        return Err(Error::domain("reconstruct", "steps must be >= 1"));
    }
    if init.rows() != coords.rows() {
        return Err(Error::shape("reconstruct", coords.rows(), init.rows()));
    }
    let features = model.features(coords)?;
    let mut state = init.clone();
    for k in 0..steps {
        let t = step_time(steps, k);
        let estimate = model.refine(coords, &features, &state, t)?;
        state = blend(estimate, &state, step_weight(steps, k))?;
    }
    Ok(state)
}

/// [`reconstruct`] over row blocks of at most `chunk` rows. Rows never
/// interact, so the result equals the unchunked call.
pub fn reconstruct_chunked<R: Refiner + Sync>(
    model: &R,
    coords: &Tensor2,
    init: &Tensor2,
    steps: usize,
    chunk: usize,
) -> Result<Tensor2> {
    if coords.rows() <= chunk {
        return reconstruct(model, coords, init, steps);
    }
    let starts: Vec<usize> = (0..coords.rows()).step_by(chunk).collect();
    let parts = starts
        .iter()
        .map(|&s| {
            let e = (s + chunk).min(coords.rows());
            reconstruct(model, &coords.slice_rows(s, e), &init.slice_rows(s, e), steps)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor2::vstack(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::iinr::model::IinrSpec;
    use crate::mlp::MlpSpec;
    use crate::rng::Rng;

    fn model() -> IinrModel {
        let spec = IinrSpec::around(
            MlpSpec::new(2, 3, 16, 1, Activation::Sine { omega: 10.0 }),
            vec![5, 4],
        );
        IinrModel::init(spec, 11).unwrap()
    }

    fn inputs(m: &IinrModel) -> (Tensor2, Tensor2) {
        let coords = Rng::new(3).gaussian(20, 2);
        let z = m.latent.sample_grid(&[5, 4]).unwrap();
        (coords, z)
    }

    #[test]
    fn one_step_equals_single_forward() {
        let m = model();
        let (coords, z) = inputs(&m);
        let r = reconstruct(&m, &coords, &z, 1).unwrap();
        assert_eq!(r, m.forward(&coords, &z, 1.0).unwrap());
    }

    #[test]
    fn two_step_first_update() {
        let m = model();
        let (coords, z) = inputs(&m);
        let f1 = m.forward(&coords, &z, 1.0).unwrap();
        let half = blend(f1.clone(), &z, step_weight(2, 0)).unwrap();
        let expect: Vec<f64> = f1
            .to_vec()
            .unwrap()
            .iter()
            .zip(z.to_vec().unwrap())
            .map(|(f, z)| 0.5 * f + 0.5 * z)
            .collect();
        assert_eq!(half.to_vec().unwrap(), expect);
        let f2 = m.forward(&coords, &half, 0.5).unwrap();
        assert_eq!(reconstruct(&m, &coords, &z, 2).unwrap(), f2);
    }

    #[test]
    fn zero_steps_rejected() {
        let m = model();
        let (coords, z) = inputs(&m);
        assert!(matches!(reconstruct(&m, &coords, &z, 0), Err(Error::Domain { .. })));
    }

    #[test]
    fn backbone_runs_once_per_call() {
        let m = model();
        let (coords, z) = inputs(&m);
        for steps in [1, 2, 5, 16] {
            m.counters.reset();
            reconstruct(&m, &coords, &z, steps).unwrap();
            assert_eq!(m.counters.backbone_passes(), 1);
            let per_step = m.spec.step_flops_per_sample() - 3 * m.spec.channels as u64;
            assert_eq!(m.counters.step_flops(), steps as u64 * per_step * coords.rows() as u64);
            assert_eq!(m.counters.backbone_flops(), m.backbone.flops_per_sample() * coords.rows() as u64);
        }
    }

    #[test]
    fn chunked_matches_whole() {
        let m = model();
        let (coords, z) = inputs(&m);
        let whole = reconstruct(&m, &coords, &z, 3).unwrap();
        let chunked = reconstruct_chunked(&m, &coords, &z, 3, 7).unwrap();
        assert_eq!(whole, chunked);
    }

    #[test]
    fn schedule() {
        assert_eq!(step_time(4, 0), 1.0);
        assert_eq!(step_time(4, 3), 0.25);
        assert_eq!(step_weight(4, 3), 1.0);
        assert_eq!(step_weight(2, 0), 0.5);
    }
}
