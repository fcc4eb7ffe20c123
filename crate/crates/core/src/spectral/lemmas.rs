//! Empirical checks of the eigenvalue (Weyl) and eigenspace (Davis-Kahan)
//! perturbation bounds. Eigenvalues are matched across the perturbation by
//! sorted position.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{eig, SPECTRAL_TOL};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeylReport {
    pub max_shift: f64,
    pub operator_norm_e: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DavisKahanReport {
    pub projector_diff: f64,
    /// Measured separation `d`; infinite when the group is the whole spectrum.
    pub gap: f64,
    pub bound: f64,
    pub holds: bool,
}

fn check_dims(a: &DMatrix<f64>, e: &DMatrix<f64>) -> Result<()> {
    if a.shape() != e.shape() || !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            actual: e.nrows(),
        });
    }
    Ok(())
}

/// Spectral norm of a symmetric matrix.
fn symmetric_norm(e: &DMatrix<f64>) -> Result<f64> {
    let ev = eig(e)?.eigenvalues;
    Ok(ev.iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
}

pub fn verify_weyl(a: &DMatrix<f64>, e: &DMatrix<f64>) -> Result<WeylReport> {
    check_dims(a, e)?;
    let before = eig(a)?.eigenvalues;
    let after = eig(&(a + e))?.eigenvalues;
    let max_shift = before
        .iter()
        .zip(&after)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let operator_norm_e = symmetric_norm(e)?;
    Ok(WeylReport {
        max_shift,
        operator_norm_e,
        holds: max_shift <= operator_norm_e + SPECTRAL_TOL,
    })
}

fn min_distance(xs: &[f64], ys: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    for x in xs {
        for y in ys {
            best = best.min((x - y).abs());
        }
    }
    best
}

/// Compares the spectral projector of `A` on the eigenvalues indexed by
/// `group` with the projector of `A + E` on the same sorted positions.
///
/// The separation `d` is the smaller of the distances from the group of `A`
/// to the complementary eigenvalues of `A + E` and from the complement of `A`
/// to the group of `A + E`. Fails with [`Error::Precondition`] unless
/// `d > ||E||`.
pub fn verify_davis_kahan(
    a: &DMatrix<f64>,
    e: &DMatrix<f64>,
    group: Range<usize>,
) -> Result<DavisKahanReport> {
    check_dims(a, e)?;
    let n = a.nrows();
    if group.is_empty() || group.end > n {
        return Err(invalid(format!(
            "group {group:?} is not a non-empty range in 0..{n}"
        )));
    }
    let before = eig(a)?;
    let after = eig(&(a + e))?;
    let norm_e = symmetric_norm(e)?;

    let split = |values: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let inside = values[group.clone()].to_vec();
        let outside = values
            .iter()
            .enumerate()
            .filter(|(i, _)| !group.contains(i))
            .map(|(_, v)| *v)
            .collect();
        (inside, outside)
    };
    let (sigma, big_sigma) = split(&before.eigenvalues);
    let (omega, big_omega) = split(&after.eigenvalues);
    let gap = min_distance(&sigma, &big_omega).min(min_distance(&big_sigma, &omega));

    if !(gap > norm_e) {
        return Err(Error::Precondition(format!(
            "separation {gap:e} does not exceed ||E|| = {norm_e:e}"
        )));
    }

    let diff = before.projector(group.clone()) - after.projector(group);
    let projector_diff = symmetric_norm(&diff)?;
    let bound = if gap.is_finite() {
        std::f64::consts::FRAC_PI_2 * norm_e / gap
    } else {
        0.0
    };
    Ok(DavisKahanReport {
        projector_diff,
        gap,
        bound,
        holds: projector_diff <= bound + SPECTRAL_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::super::symmetrize;
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn identity_shift_is_tight() {
        let a = symmetrize(&DMatrix::from_fn(5, 5, |i, j| (i * 3 + j) as f64));
        let e = DMatrix::identity(5, 5) * 0.05;
        let r = verify_weyl(&a, &e).unwrap();
        assert!((r.max_shift - 0.05).abs() < 1e-12);
        assert!((r.operator_norm_e - 0.05).abs() < 1e-15);
        assert!(r.holds);
    }

    #[test]
    fn zero_perturbation() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0, 9.0]));
        let e = DMatrix::zeros(3, 3);
        assert_eq!(verify_weyl(&a, &e).unwrap().max_shift, 0.0);
        let dk = verify_davis_kahan(&a, &e, 0..1).unwrap();
        assert_eq!(dk.projector_diff, 0.0);
        assert!(dk.holds);
    }

    #[test]
    fn two_by_two_rotation() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 10.0]));
        let e = DMatrix::from_row_slice(2, 2, &[0.0, 0.1, 0.1, 0.0]);
        let r = verify_davis_kahan(&a, &e, 0..1).unwrap();
        // perturbed eigenvalues are 5 +- sqrt(25.01); d is measured across
        // the two pairs and is at least gap - ||E|| = 9.9
        let shift = 25.01f64.sqrt() - 5.0;
        assert!((r.gap - (10.0 + shift)).abs() < 1e-9, "gap {}", r.gap);
        assert!(r.gap >= 9.9);
        // closed form: sin of the rotation angle, tan(2t) = 0.2 / 10
        let theta = 0.5 * (0.02f64).atan();
        assert!((r.projector_diff - theta.sin()).abs() < 1e-12);
        assert!(r.holds);
    }

    #[test]
    fn gap_violation_is_reported() {
        // the group splits a near-degenerate pair
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 0.05, 5.0]));
        let e = DMatrix::identity(3, 3) * 0.1;
        assert!(matches!(
            verify_davis_kahan(&a, &e, 0..1),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn whole_spectrum_group_has_zero_bound() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]));
        let e = DMatrix::from_row_slice(2, 2, &[0.0, 0.3, 0.3, 0.0]);
        let r = verify_davis_kahan(&a, &e, 0..2).unwrap();
        assert!(r.projector_diff < 1e-12);
        assert_eq!(r.bound, 0.0);
        assert!(r.holds);
    }

    #[test]
    fn bad_group_rejected() {
        let a = DMatrix::identity(2, 2);
        assert!(verify_davis_kahan(&a, &a, 1..1).is_err());
        assert!(verify_davis_kahan(&a, &a, 0..3).is_err());
    }
}
