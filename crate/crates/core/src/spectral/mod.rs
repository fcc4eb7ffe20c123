//! Spectral tools for symmetric graph operators.
//!
//! Dense symmetric eigendecomposition, α-separated partitions of a spectrum,
//! polynomial spectral filters and the two eigen-perturbation lemmas used by
//! the stability bound.

mod filter;
mod lemmas;

pub use filter::{
    apply_polynomial_filter, apply_spectral_filter, design_fdt_filter, fdt_check,
    fdt_check_on_interval, FdtReport, FilterDesign, FilterSpec,
};
pub use lemmas::{verify_davis_kahan, verify_weyl, DavisKahanReport, WeylReport};

use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Absolute tolerance for spectral identity checks.
pub const SPECTRAL_TOL: f64 = 1e-8;

/// Maximum allowed asymmetry, `max |a_ij - a_ji|`, for [`eig`].
pub const SYMMETRY_TOL: f64 = 1e-10;

pub const DECOMPOSITION_SCHEMA: &str = "mnn-alloc/spectral-decomposition/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    /// `L = D - W`.
    Combinatorial,
    /// `L = I - D^-1/2 W D^-1/2`.
    Normalized,
    /// `(S + S^T) / 2` of the log-domain states.
    SymmetrizedShift,
}

impl FromStr for OperatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "combinatorial" => Ok(Self::Combinatorial),
            "normalized" => Ok(Self::Normalized),
            "symmetrized-shift" => Ok(Self::SymmetrizedShift),
            other => Err(invalid(format!("unknown operator kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Combinatorial => "combinatorial",
            Self::Normalized => "normalized",
            Self::SymmetrizedShift => "symmetrized-shift",
        })
    }
}

pub fn symmetrize(s: &DMatrix<f64>) -> DMatrix<f64> {
    let n = s.nrows();
    DMatrix::from_fn(n, n, |i, j| 0.5 * (s[(i, j)] + s[(j, i)]))
}

/// Graph operator built from log-domain link states.
///
/// The Laplacian kinds use linear weights `w_ij = (e^{s_ij} + e^{s_ji}) / 2`
/// off the diagonal, so the result is positive semidefinite.
pub fn laplacian(s: &DMatrix<f64>, kind: OperatorKind) -> Result<DMatrix<f64>> {
    if !s.is_square() {
        return Err(invalid("operator input must be square"));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(invalid("operator input has non-finite entries"));
    }
    match kind {
        OperatorKind::SymmetrizedShift => Ok(symmetrize(s)),
        OperatorKind::Combinatorial | OperatorKind::Normalized => {
            let n = s.nrows();
            let w = DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    0.0
                } else {
                    0.5 * (s[(i, j)].exp() + s[(j, i)].exp())
                }
            });
            weight_laplacian(&w, kind)
        }
    }
}

/// Laplacian of a nonnegative symmetric weight matrix. Self loops are ignored.
pub fn weight_laplacian(w: &DMatrix<f64>, kind: OperatorKind) -> Result<DMatrix<f64>> {
    if !w.is_square() {
        return Err(invalid("weight matrix must be square"));
    }
    let n = w.nrows();
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid("weights must be finite and nonnegative"));
    }
    let w = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            0.5 * (w[(i, j)] + w[(j, i)])
        }
    });
    let degree: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    match kind {
        OperatorKind::Combinatorial => Ok(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                degree[i]
            } else {
                -w[(i, j)]
            }
        })),
        OperatorKind::Normalized => {
            let dinv: Vec<f64> = degree
                .iter()
                .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
                .collect();
            Ok(DMatrix::from_fn(n, n, |i, j| {
                let off = w[(i, j)] * (dinv[i] * dinv[j]);
                if i == j {
                    1.0 - off
                } else {
                    -off
                }
            }))
        }
        OperatorKind::SymmetrizedShift => Ok(w),
    }
}

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenpairs of a symmetric operator, eigenvalues ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Column `i` is the unit eigenvector for `eigenvalues[i]`.
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn operator_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvector(&self, i: usize) -> DVector<f64> {
        self.eigenvectors.column(i).into_owned()
    }

    /// `sum_i lambda_i phi_i phi_i^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * self.eigenvalues[j]);
        scaled * v.transpose()
    }

    /// `max |V^T V - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.eigenvectors.transpose() * &self.eigenvectors;
        let n = g.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// Orthogonal projector onto the eigenvectors with indices in `range`.
    pub fn projector(&self, range: Range<usize>) -> DMatrix<f64> {
        let cols = self.eigenvectors.columns(range.start, range.len());
        cols * cols.transpose()
    }

    pub fn to_document(&self) -> DecompositionDocument {
        DecompositionDocument {
            schema: DECOMPOSITION_SCHEMA.to_string(),
            operator_dim: self.operator_dim(),
            eigenvalues: self.eigenvalues.clone(),
            eigenvectors: crate::netgen::row_major(&self.eigenvectors),
        }
    }

    pub fn from_document(doc: DecompositionDocument) -> Result<Self> {
        if doc.schema != DECOMPOSITION_SCHEMA {
            return Err(Error::Document(format!(
                "unsupported schema '{}'",
                doc.schema
            )));
        }
        let n = doc.operator_dim;
        if doc.eigenvalues.len() != n || doc.eigenvectors.len() != n * n {
            return Err(Error::Document(
                "decomposition arrays have wrong length".into(),
            ));
        }
        Ok(Self {
            eigenvalues: doc.eigenvalues,
            eigenvectors: DMatrix::from_row_slice(n, n, &doc.eigenvectors),
        })
    }
}

/// Serialized [`SpectralDecomposition`]; `eigenvectors` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionDocument {
    pub schema: String,
    pub operator_dim: usize,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<f64>,
}

/// Dense symmetric eigendecomposition.
///
/// Eigenvectors are sign-normalized so that their largest-magnitude entry
/// (first one on ties) is positive.
pub fn eig(a: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    if !a.is_square() {
        return Err(invalid("eig requires a square matrix"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(invalid("eig input has non-finite entries"));
    }
    let asym = max_asymmetry(a);
    if asym > SYMMETRY_TOL {
        return Err(invalid(format!(
            "matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(SpectralDecomposition {
            eigenvalues: vec![],
            eigenvectors: DMatrix::zeros(0, 0),
        });
    }
    let solved = SymmetricEigen::new(symmetrize(a));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| solved.eigenvalues[i].total_cmp(&solved.eigenvalues[j]));

    let eigenvalues: Vec<f64> = order.iter().map(|&i| solved.eigenvalues[i]).collect();
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = solved.eigenvectors.column(src).into_owned();
        let pivot =
            col.iter().enumerate().fold(
                0,
                |best, (k, v)| if v.abs() > col[best].abs() { k } else { best },
            );
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        eigenvectors.set_column(dst, &col);
    }
    let dec = SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    };
    debug_assert!(dec.orthonormality_error() < SPECTRAL_TOL);
    debug_assert!({
        let scale = a.amax().max(1.0);
        (dec.reconstruct() - a).amax() < SPECTRAL_TOL * scale
    });
    Ok(dec)
}

/// Spectral norm (largest singular value).
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .singular_values()
        .iter()
        .fold(0.0f64, |acc, v| acc.max(*v))
}

/// Magnitude of the dominant eigenvalue estimated by `steps` rounds of power
/// iteration from the normalized all-ones vector; returns `||A v||` for the
/// final iterate `v`.
pub fn power_iteration_magnitude(a: &DMatrix<f64>, steps: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..steps.max(1) {
        let w = a * &v;
        estimate = w.norm();
        if estimate == 0.0 {
            return 0.0;
        }
        v = w / estimate;
    }
    estimate
}

/// Contiguous groups of a sorted spectrum such that eigenvalues in different
/// groups are more than `alpha` apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPartition {
    pub alpha: f64,
    pub groups: Vec<Range<usize>>,
}

impl SpectrumPartition {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group_of(&self, index: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&index))
    }
}

/// Greedy split: a new group starts wherever `lambda_{i+1} - lambda_i > alpha`.
/// Gaps exactly equal to `alpha` stay inside a group.
pub fn partition_spectrum(eigenvalues: &[f64], alpha: f64) -> Result<SpectrumPartition> {
    if eigenvalues.is_empty() {
        return Err(invalid("cannot partition an empty spectrum"));
    }
    if !(alpha > 0.0) {
        return Err(invalid("alpha must be > 0"));
    }
    if eigenvalues.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("eigenvalues must be sorted ascending"));
    }
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..eigenvalues.len() {
        if eigenvalues[i] - eigenvalues[i - 1] > alpha {
            groups.push(start..i);
            start = i;
        }
    }
    groups.push(start..eigenvalues.len());
    Ok(SpectrumPartition { alpha, groups })
}

/// Smallest `N1` such that every gap `lambda_{k+1} - lambda_k` with `k > N1`
/// (1-based) is at most `alpha`. Returns `n` when the last gap already
/// exceeds `alpha`.
pub fn empirical_gap_index(eigenvalues: &[f64], alpha: f64) -> usize {
    let n = eigenvalues.len();
    let last_wide = eigenvalues
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] - w[0] > alpha)
        .map(|(k, _)| k + 1)
        .next_back();
    match last_wide {
        None => 0,
        Some(k) if k == n - 1 => n,
        Some(k) => k,
    }
}

/// Largest consecutive gap of a sorted spectrum; 0 for fewer than two values.
pub fn largest_gap(eigenvalues: &[f64]) -> f64 {
    eigenvalues
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0, f64::max)
}
