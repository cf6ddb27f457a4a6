//! The forward degradation process and its perturbed training variant.

use crate::error::{Error, Result};
use crate::tensor::{axpby, check_same_shape, Tensor2};

fn check_time(op: &'static str, t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::domain(op, format!("t must lie in [0, 1], got {t}")));
    }
    Ok(())
}

/// `(1 - t) * target + t * z`, elementwise.
///
/// Exact at the endpoints: `t = 0` returns `target` and `t = 1` returns `z`.
pub fn degrade(target: &Tensor2, z: &Tensor2, t: f64) -> Result<Tensor2> {
    check_time("degrade", t)?;
    let (a, b) = (target.real()?, z.real()?);
    check_same_shape("degrade", a, b)?;
    if t == 0.0 {
        return Ok(target.clone());
    }
    if t == 1.0 {
        return Ok(z.clone());
    }
    Ok(Tensor2::Real(axpby(1.0 - t, a, t, b)))
}

/// `degrade(target, z, t) + epsilon * t * n`.
pub fn make_training_state(
    target: &Tensor2,
    z: &Tensor2,
    t: f64,
    n: &Tensor2,
    epsilon: f64,
) -> Result<Tensor2> {
    let mut state = degrade(target, z, t)?;
    let noise = n.real()?;
    let s = state.real_mut()?;
    check_same_shape("make_training_state", s, noise)?;
    let scale = epsilon * t;
    if scale != 0.0 {
        s.zip_mut_with(noise, |v, &n| *v += scale * n);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn endpoints_are_exact() {
        let mut rng = Rng::new(1);
        let target = rng.gaussian(5, 3);
        let z = rng.gaussian(5, 3);
        assert_eq!(degrade(&target, &z, 0.0).unwrap(), target);
        assert_eq!(degrade(&target, &z, 1.0).unwrap(), z);
    }

    #[test]
    fn midpoint_arithmetic() {
        let out = degrade(&Tensor2::filled(1, 1, 0.8), &Tensor2::filled(1, 1, 0.2), 0.5).unwrap();
        assert_eq!(out.to_vec().unwrap(), vec![0.5]);
    }

    #[test]
    fn time_out_of_range() {
        let a = Tensor2::filled(1, 1, 0.0);
        assert!(matches!(degrade(&a, &a, 1.5), Err(Error::Domain { .. })));
        assert!(matches!(degrade(&a, &a, -0.1), Err(Error::Domain { .. })));
        assert!(degrade(&a, &a, f64::NAN).is_err());
    }

    #[test]
    fn shape_mismatch() {
        assert!(degrade(&Tensor2::filled(2, 1, 0.0), &Tensor2::filled(1, 2, 0.0), 0.3).is_err());
    }

    #[test]
    fn training_state_cases() {
        let mut rng = Rng::new(2);
        let target = rng.gaussian(4, 2);
        let z = rng.gaussian(4, 2);
        let n = rng.gaussian(4, 2);
        assert_eq!(
            make_training_state(&target, &z, 0.3, &n, 0.0).unwrap(),
            degrade(&target, &z, 0.3).unwrap()
        );
        assert_eq!(make_training_state(&target, &z, 0.0, &n, 0.1).unwrap(), target);
        let one = Tensor2::filled(1, 1, 1.0);
        let zero = Tensor2::filled(1, 1, 0.0);
        let v = make_training_state(&zero, &zero, 1.0, &one, 0.1).unwrap();
        assert_eq!(v.to_vec().unwrap(), vec![0.1]);
    }
}
