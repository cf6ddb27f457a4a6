//! Backprop against central finite differences.

use iinr::iinr::model::Fusion;
use iinr::{Activation, IinrModel, IinrSpec, MlpModel, MlpSpec, Rng, Tensor2};
use iinr_oracles::{
    iinr_fd_gradient, iinr_flat_grads, max_rel_error, mlp_fd_gradient, FD_STEP,
};

const TOL: f64 = 1e-4;
/// Entries below this magnitude are compared absolutely.
const FLOOR: f64 = 1e-3;

fn activations() -> [Activation; 4] {
    [
        Activation::Sine { omega: 30.0 },
        Activation::Gauss { sigma: 10.0 },
        Activation::GaborWavelet { omega: 7.0, sigma: 13.0 },
        Activation::Relu,
    ]
}

fn inputs(rng: &mut Rng, rows: usize, cols: usize) -> Tensor2 {
    let v = (0..rows * cols).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    Tensor2::from_vec(rows, cols, v).unwrap()
}

fn mlp_case(act: Activation, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut m = MlpModel::init(MlpSpec::new(2, 3, 8, 2, act), &mut rng).unwrap();
    let x = inputs(&mut rng, 5, 2);
    let w = rng.gaussian(5, 3);
    m.zero_grad();
    m.forward(x.clone()).unwrap();
    m.backward(&w).unwrap();
    let fd = mlp_fd_gradient(&m, &x, &w, FD_STEP);
    max_rel_error(&m.flat_grads(), &fd, FLOOR)
}

#[test]
fn mlp_backprop_matches_fd_for_every_activation() {
    for act in activations() {
        for seed in 0..5 {
            let err = mlp_case(act, seed);
            assert!(err < TOL, "{act:?} seed {seed}: rel err {err:e}");
        }
    }
}

fn iinr_case(act: Activation, fusion: Fusion, seed: u64) -> f64 {
    let mut rng = Rng::new(seed + 100);
    let backbone = MlpSpec::new(2, 3, 8, 1, act);
    let mut spec = IinrSpec::around(backbone, vec![4, 4]);
    spec.fusion = fusion;
    spec.feedback_width = 6;
    spec.fuse_width = 7;
    let mut m = IinrModel::init(spec, seed).unwrap();
    let coords = inputs(&mut rng, 4, 2);
    let state = rng.gaussian(4, 3);
    let w = rng.gaussian(4, 3);
    let t = rng.uniform();
    m.zero_grad();
    m.forward_train(&coords, &state, t).unwrap();
    m.backward(&w).unwrap();
    let fd = iinr_fd_gradient(&m, &coords, &state, t, &w, FD_STEP);
    max_rel_error(&iinr_flat_grads(&m), &fd, FLOOR)
}

#[test]
fn iinr_backprop_matches_fd() {
    for act in activations() {
        for fusion in [Fusion::Multiplicative, Fusion::Adaptive] {
            for seed in 0..3 {
                let err = iinr_case(act, fusion, seed);
                assert!(err < TOL, "{act:?} {fusion:?} seed {seed}: rel err {err:e}");
            }
        }
    }
}

#[test]
fn disabled_modules_get_no_gradient() {
    let backbone = MlpSpec::new(2, 1, 8, 1, Activation::Sine { omega: 30.0 });
    let mut spec = IinrSpec::around(backbone, vec![4, 4]);
    spec.feedback_enabled = false;
    let mut m = IinrModel::init(spec, 3).unwrap();
    let mut rng = Rng::new(0);
    let coords = inputs(&mut rng, 4, 2);
    m.zero_grad();
    m.forward_train(&coords, &rng.gaussian(4, 1), 0.5).unwrap();
    m.backward(&Tensor2::filled(4, 1, 1.0)).unwrap();
    assert!(m.feedback.flat_grads().iter().all(|&g| g == 0.0));
    assert!(m.fuse.flat_grads().iter().any(|&g| g != 0.0));
}
