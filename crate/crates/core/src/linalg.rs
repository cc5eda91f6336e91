use nalgebra::{DMatrix, SymmetricEigen};

/// Eigenvalues at or below this (relative to the largest) are treated as zero.
pub const PINV_THRESHOLD: f64 = 1e-12;

/// Ratio of extreme singular values; infinite for a singular matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn invert(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.nrows() == 1 {
        let v = m[(0, 0)];
        return (v != 0.0 && v.is_finite()).then(|| DMatrix::from_element(1, 1, 1.0 / v));
    }
    m.clone().try_inverse()
}

/// Moore–Penrose inverse of a symmetric matrix through its eigendecomposition.
pub fn pseudo_inverse_sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.nrows() == 1 {
        let v = a[(0, 0)];
        return DMatrix::from_element(1, 1, if v.abs() > PINV_THRESHOLD { 1.0 / v } else { 0.0 });
    }
    let eig = SymmetricEigen::new(a.clone());
    let scale = eig.eigenvalues.amax().max(1.0);
    let inv = eig.eigenvalues.map(|l| if l.abs() > PINV_THRESHOLD * scale { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

pub fn min_eigenvalue_sym(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 1 {
        return a[(0, 0)];
    }
    SymmetricEigen::new(a.clone()).eigenvalues.min()
}

/// True when `lower ≤ upper` in the PSD order, up to `tol`.
pub fn psd_le(lower: &DMatrix<f64>, upper: &DMatrix<f64>, tol: f64) -> bool {
    let diff = upper - lower;
    let sym = (&diff + diff.transpose()) * 0.5;
    min_eigenvalue_sym(&sym) >= -tol
}
