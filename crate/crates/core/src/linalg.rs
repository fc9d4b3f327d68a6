//! Small dense linear-algebra helpers shared by the estimators and kernels.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub(crate) const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Largest entrywise asymmetry `max |a_ij - a_ji|`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    (a - a.transpose()).amax()
}

pub(crate) fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            what: "square matrix columns",
            expected: a.nrows(),
            actual: a.ncols(),
        });
    }
    let asym = asymmetry(a);
    if asym > SYMMETRY_TOLERANCE * a.amax().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sorted_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut ev: Vec<f64> = symmetrize(a).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    sorted_eigenvalues(a).first().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(a: &DMatrix<f64>) -> f64 {
    sorted_eigenvalues(a).last().copied().unwrap_or(0.0)
}

/// Positive semidefinite square root; slightly negative eigenvalues from
/// rounding are clamped to zero.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// Orthogonal projector onto the column space of `a`, with rank decided
/// by the pivoted-QR diagonal at `rel_tol` of its largest entry.
pub fn column_space_projector(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = a.nrows();
    if a.ncols() == 0 {
        return DMatrix::zeros(n, n);
    }
    let qr = a.clone().col_piv_qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..r.nrows().min(r.ncols())).map(|k| r[(k, k)].abs()).collect();
    let top = diag.iter().copied().fold(0.0, f64::max);
    let rank = diag.iter().filter(|&&d| d > rel_tol * top).count();
    let q = qr.q();
    let basis = q.columns(0, rank);
    basis * basis.transpose()
}

/// Moore-Penrose inverse of a symmetric matrix; eigenvalues below
/// `rel_tol` of the largest magnitude are treated as zero.
pub fn symmetric_pinv(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let top = eig.eigenvalues.amax();
    let inv = eig
        .eigenvalues
        .map(|l| if l.abs() > rel_tol * top { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// `||a - b||_F / ||b||_F`.
pub fn relative_frobenius_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn ones(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0)
}
