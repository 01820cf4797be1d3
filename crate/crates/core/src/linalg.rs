//! Small dense linear-algebra helpers shared by the mixture modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

/// Relative asymmetry accepted when validating covariance matrices.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Largest absolute entry of `m`.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// True when `max |m - m^T| <= SYMMETRY_TOLERANCE * max |m|`.
pub fn is_symmetric(m: &DMatrix<f64>) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = max_abs(m);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOLERANCE * scale {
                return false;
            }
        }
    }
    true
}

/// Copies the upper triangle onto the lower one so the result is exactly symmetric.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = m.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

pub fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Cholesky::new(m.clone())
}

/// `ln det m` for a positive-definite matrix.
pub fn log_det_pd(m: &DMatrix<f64>) -> Option<f64> {
    let chol = cholesky(m)?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        let d = l[(i, i)];
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        acc += d.ln();
    }
    Some(2.0 * acc)
}

/// A factor `L` with `L L^T = m` for any symmetric PSD `m`.
///
/// Cholesky is used when it succeeds; otherwise the symmetric eigendecomposition
/// with negative eigenvalues clamped to zero, so zero-variance directions stay
/// exactly deterministic.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = cholesky(m) {
        return chol.l();
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut factor = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = if lambda > 0.0 { lambda.sqrt() } else { 0.0 };
        factor.column_mut(j).scale_mut(s);
    }
    factor
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, &v| acc.min(v))
}

/// `v v^T` computed entrywise as `v_i * v_j`, which is exactly symmetric.
pub fn outer(v: &DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    DMatrix::from_fn(n, n, |i, j| v[i] * v[j])
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Builds a matrix from row-major nested vectors; `None` on ragged input.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_factor_reconstructs_singular_matrix() {
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let m = outer(&v);
        let l = psd_factor(&m);
        let back = &l * l.transpose();
        assert!((back - &m).amax() < 1e-12);
        let zero = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(psd_factor(&zero), zero);
    }

    #[test]
    fn log_det_matches_product_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 0.5]));
        assert!((log_det_pd(&m).unwrap() - 3.0_f64.ln()).abs() < 1e-15);
        assert!(log_det_pd(&DMatrix::zeros(2, 2)).is_none());
    }

    #[test]
    fn symmetry_check_is_relative() {
        let mut m = DMatrix::from_row_slice(2, 2, &[1e6, 1.0, 1.0, 1e6]);
        assert!(is_symmetric(&m));
        m[(0, 1)] += 1e-7;
        assert!(is_symmetric(&m));
        m[(0, 1)] += 1.0;
        assert!(!is_symmetric(&m));
        assert!(is_symmetric(&symmetrize(&m)));
    }
}
