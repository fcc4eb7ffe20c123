#![allow(dead_code)]

use mnn_alloc::gnn::GnnModel;
use mnn_alloc::rng::SeededRng;
use nalgebra::{DMatrix, DVector};

pub fn random_symmetric(rng: &mut SeededRng, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.gaussian());
    (&g + g.transpose()) * 0.5
}

/// `<u, p(H)>` for the allocation produced by `model`.
fn objective(
    model: &GnnModel,
    op: &DMatrix<f64>,
    x: &DVector<f64>,
    p0: f64,
    u: &DVector<f64>,
) -> f64 {
    let fwd = model.forward(op, x, p0).unwrap();
    fwd.allocation
        .p
        .iter()
        .zip(u.iter())
        .map(|(p, w)| p * w)
        .sum()
}

/// Largest relative disagreement between the analytic gradient and central
/// differences. Entries whose magnitudes are both below `floor` are compared
/// against `floor` instead.
pub fn gradient_check(
    model: &GnnModel,
    op: &DMatrix<f64>,
    x: &DVector<f64>,
    p0: f64,
    u: &DVector<f64>,
    step: f64,
    floor: f64,
) -> f64 {
    let fwd = model.forward(op, x, p0).unwrap();
    let analytic = model.backward(op, &fwd, p0, u).unwrap();
    let mut worst = 0.0f64;
    for l in 0..model.coeffs.len() {
        for i in 0..model.coeffs[l].len() {
            let mut plus = model.clone();
            plus.coeffs[l][i] += step;
            let mut minus = model.clone();
            minus.coeffs[l][i] -= step;
            let fd =
                (objective(&plus, op, x, p0, u) - objective(&minus, op, x, p0, u)) / (2.0 * step);
            let a = analytic[l][i];
            let scale = a.abs().max(fd.abs()).max(floor);
            worst = worst.max((a - fd).abs() / scale);
        }
    }
    worst
}
