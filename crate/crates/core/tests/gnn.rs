mod common;

use common::{gradient_check, random_symmetric};
use mnn_alloc::gnn::{Activation, Architecture, GnnModel};
use mnn_alloc::rng::SeededRng;
use mnn_alloc::spectral::{apply_polynomial_filter, apply_spectral_filter, eig, FilterSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn instance(seed: u64, hidden: Activation) -> (GnnModel, DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let arch = Architecture {
        layers: 2,
        taps: 3,
        width: 3,
    };
    let mut model = GnnModel::random(&arch, 0.7, seed).unwrap();
    model.hidden_activation = hidden;
    let mut rng = SeededRng::new(seed ^ 0xabc);
    let op = random_symmetric(&mut rng, 8) / 4.0;
    let x = DVector::from_fn(8, |_, _| rng.gaussian());
    let u = DVector::from_fn(8, |_, _| rng.gaussian());
    (model, op, x, u)
}

#[test]
fn backprop_matches_finite_differences_for_every_activation() {
    for hidden in Activation::ALL {
        for seed in 0..20 {
            let (model, op, x, u) = instance(seed, hidden);
            let err = gradient_check(&model, &op, &x, 1.5, &u, 1e-5, 1e-6);
            assert!(err < 1e-5, "{hidden:?} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn output_activation_is_differentiated_too() {
    let (mut model, op, x, u) = instance(3, Activation::Tanh);
    model.output_activation = Activation::Tanh;
    assert!(gradient_check(&model, &op, &x, 1.0, &u, 1e-5, 1e-6) < 1e-5);
}

#[test]
fn one_linear_layer_is_a_graph_filter() {
    let mut rng = SeededRng::new(11);
    let op = random_symmetric(&mut rng, 12) / 5.0;
    let x = DVector::from_fn(12, |_, _| rng.gaussian());
    let coeffs: Vec<f64> = (0..6).map(|_| rng.gaussian()).collect();
    let mut model = GnnModel::zeros(&Architecture {
        layers: 1,
        taps: 6,
        width: 1,
    })
    .unwrap();
    model.coeffs[0] = coeffs.clone();
    let out = model.forward_features(&op, &x).unwrap().output;

    let filter = FilterSpec::new(coeffs).unwrap();
    let spectral = apply_spectral_filter(&filter, &eig(&op).unwrap(), &x).unwrap();
    let poly = apply_polynomial_filter(&filter, &op, &x).unwrap();
    assert!((&out - &spectral).amax() < 1e-10);
    assert!((&out - &poly).amax() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn permutation_equivariance(seed in 0u64..10_000, n in 2usize..12) {
        let mut rng = SeededRng::new(seed);
        let op = random_symmetric(&mut rng, n) / (n as f64);
        let x = DVector::from_fn(n, |_, _| rng.gaussian());
        let perm = rng.sample_without_replacement(n, n);
        let model = GnnModel::random(&Architecture { layers: 3, taps: 3, width: 4 }, 0.6, seed).unwrap();

        let op_perm = DMatrix::from_fn(n, n, |i, j| op[(perm[i], perm[j])]);
        let x_perm = DVector::from_fn(n, |i, _| x[perm[i]]);
        let p = model.forward(&op, &x, 1.0).unwrap().allocation.p;
        let p_perm = model.forward(&op_perm, &x_perm, 1.0).unwrap().allocation.p;
        for i in 0..n {
            prop_assert!((p_perm[i] - p[perm[i]]).abs() < 1e-12);
        }
    }
}
