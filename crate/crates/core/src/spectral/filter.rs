use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{SpectralDecomposition, SpectrumPartition, SPECTRAL_TOL};
use crate::error::{invalid, Error, Result};

/// Points used to estimate the Lipschitz constant of a response.
const LIPSCHITZ_GRID: usize = 2001;

/// Polynomial graph filter `h(lambda) = sum_k h_k lambda^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub coeffs: Vec<f64>,
}

impl FilterSpec {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(invalid("a filter needs at least one tap"));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(invalid("filter coefficients must be finite"));
        }
        Ok(Self { coeffs })
    }

    pub fn taps(&self) -> usize {
        self.coeffs.len()
    }

    pub fn response(&self, lambda: f64) -> f64 {
        self.coeffs
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * lambda + c)
    }

    pub fn derivative(&self, lambda: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, c)| acc * lambda + k as f64 * c)
    }
}

/// `sum_i h(lambda_i) <f, phi_i> phi_i`.
pub fn apply_spectral_filter(
    filter: &FilterSpec,
    dec: &SpectralDecomposition,
    f: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = dec.operator_dim();
    if f.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: f.len(),
        });
    }
    let mut coords = dec.eigenvectors.tr_mul(f);
    for (c, &lambda) in coords.iter_mut().zip(&dec.eigenvalues) {
        *c *= filter.response(lambda);
    }
    Ok(&dec.eigenvectors * coords)
}

/// `sum_k h_k A^k f` by Horner's rule over matrix-vector products.
pub fn apply_polynomial_filter(
    filter: &FilterSpec,
    a: &DMatrix<f64>,
    f: &DVector<f64>,
) -> Result<DVector<f64>> {
    if !a.is_square() || a.nrows() != f.len() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            actual: f.len(),
        });
    }
    let mut acc = f * *filter.coeffs.last().expect("filter has taps");
    for &c in filter.coeffs.iter().rev().skip(1) {
        acc = a * acc;
        acc.axpy(c, f, 1.0);
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdtReport {
    /// `delta <= budget`, up to the spectral tolerance.
    pub is_fdt: bool,
    /// Largest response spread inside each group.
    pub per_group_delta: Vec<f64>,
    pub delta: f64,
    /// `max |h'|` on the sampled interval.
    pub lipschitz_b: f64,
    /// `max |h(lambda_i)|` over the eigenvalues.
    pub max_abs_response: f64,
    /// `max |h|` over the sampled interval.
    pub max_abs_on_interval: f64,
    pub interval: (f64, f64),
}

impl FdtReport {
    /// `|h| < 1` on the sampled interval.
    pub fn non_amplifying(&self) -> bool {
        self.max_abs_on_interval < 1.0
    }
}

/// FDT check with the Lipschitz constant measured on `[lambda_min, lambda_max]`.
pub fn fdt_check(
    filter: &FilterSpec,
    dec: &SpectralDecomposition,
    partition: &SpectrumPartition,
    delta_budget: f64,
) -> FdtReport {
    let lo = dec.eigenvalues.first().copied().unwrap_or(0.0);
    let hi = dec.eigenvalues.last().copied().unwrap_or(0.0);
    fdt_check_on_interval(filter, &dec.eigenvalues, partition, delta_budget, (lo, hi))
}

/// FDT check with the Lipschitz constant and the response magnitude sampled
/// on a caller-chosen interval.
pub fn fdt_check_on_interval(
    filter: &FilterSpec,
    eigenvalues: &[f64],
    partition: &SpectrumPartition,
    delta_budget: f64,
    interval: (f64, f64),
) -> FdtReport {
    let per_group_delta: Vec<f64> = partition
        .groups
        .iter()
        .map(|g| {
            let (lo, hi) = eigenvalues[g.clone()]
                .iter()
                .map(|&l| filter.response(l))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), h| {
                    (lo.min(h), hi.max(h))
                });
            hi - lo
        })
        .collect();
    let delta = per_group_delta.iter().copied().fold(0.0, f64::max);

    let (a, b) = interval;
    let mut lipschitz_b = 0.0f64;
    let mut max_abs_on_interval = 0.0f64;
    for i in 0..LIPSCHITZ_GRID {
        let x = a + (b - a) * i as f64 / (LIPSCHITZ_GRID - 1) as f64;
        lipschitz_b = lipschitz_b.max(filter.derivative(x).abs());
        max_abs_on_interval = max_abs_on_interval.max(filter.response(x).abs());
    }
    let max_abs_response = eigenvalues
        .iter()
        .map(|&l| filter.response(l).abs())
        .fold(0.0, f64::max);
    max_abs_on_interval = max_abs_on_interval.max(max_abs_response);

    FdtReport {
        is_fdt: delta <= delta_budget + SPECTRAL_TOL,
        per_group_delta,
        delta,
        lipschitz_b,
        max_abs_response,
        max_abs_on_interval,
        interval,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterDesign {
    pub filter: FilterSpec,
    /// Euclidean norm of the fit residual over the eigenvalues.
    pub residual: f64,
    /// More taps than distinct eigenvalues; the fit is the minimum-norm one.
    pub ill_posed: bool,
}

/// Least-squares polynomial fit to a piecewise-constant response that takes
/// `targets[k]` on every eigenvalue of group `k`.
///
/// The Vandermonde columns are scaled by their largest magnitude before the
/// SVD solve.
pub fn design_fdt_filter(
    dec: &SpectralDecomposition,
    partition: &SpectrumPartition,
    targets: &[f64],
    taps: usize,
) -> Result<FilterDesign> {
    if taps == 0 {
        return Err(invalid("taps must be >= 1"));
    }
    if targets.len() != partition.len() {
        return Err(invalid(format!(
            "expected {} targets, got {}",
            partition.len(),
            targets.len()
        )));
    }
    if targets.iter().any(|t| !(t.abs() < 1.0)) {
        return Err(invalid("targets must lie in (-1, 1)"));
    }
    let lambdas = &dec.eigenvalues;
    let n = lambdas.len();
    let mut rhs = DVector::zeros(n);
    for (g, &t) in partition.groups.iter().zip(targets) {
        for i in g.clone() {
            rhs[i] = t;
        }
    }

    let mut vander = DMatrix::from_fn(n, taps, |i, k| lambdas[i].powi(k as i32));
    let scales: Vec<f64> = (0..taps)
        .map(|k| {
            let s = vander.column(k).amax();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    for (k, s) in scales.iter().enumerate() {
        vander.column_mut(k).unscale_mut(*s);
    }

    let svd = vander.clone().svd(true, true);
    let tol = f64::EPSILON * n.max(taps) as f64 * svd.singular_values.amax();
    let scaled = svd
        .solve(&rhs, tol)
        .map_err(|e| invalid(format!("least-squares solve failed: {e}")))?;
    let residual = (&vander * &scaled - &rhs).norm();
    let coeffs: Vec<f64> = scaled.iter().zip(&scales).map(|(c, s)| c / s).collect();

    let scale = lambdas.iter().fold(1.0f64, |a, l| a.max(l.abs()));
    let mut distinct = 0;
    let mut last = f64::NEG_INFINITY;
    for &l in lambdas {
        if l - last > 1e-12 * scale {
            distinct += 1;
            last = l;
        }
    }

    Ok(FilterDesign {
        filter: FilterSpec::new(coeffs)?,
        residual,
        ill_posed: taps > distinct,
    })
}
