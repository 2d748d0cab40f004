//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

/// Solves `a x = b` for symmetric positive (semi)definite `a`.
///
/// Tries a Cholesky factorisation first and falls back to an SVD
/// pseudo-inverse when `a` is singular or badly conditioned.
pub(crate) fn solve_symmetric(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        let x = chol.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    let svd = a.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let eps = max_sv * 1e-12;
    svd.solve(b, eps).ok().filter(|x| x.iter().all(|v| v.is_finite()))
}

/// Inverse of a symmetric positive definite matrix, if it exists.
pub(crate) fn inverse_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone().cholesky().map(|c| c.inverse())
}

/// Names of columns that lie (numerically) in the span of the columns before them.
///
/// Runs an incremental modified Gram-Schmidt pass; a column whose residual norm
/// falls below `rel_tol` times its original norm is reported.
pub(crate) fn collinear_columns(x: &DMatrix<f64>, names: &[String], rel_tol: f64) -> Vec<String> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut out = Vec::new();
    for (j, name) in names.iter().enumerate().take(x.ncols()) {
        let col = x.column(j).into_owned();
        let norm0 = col.norm();
        if norm0 == 0.0 {
            out.push(name.clone());
            continue;
        }
        let mut v = col;
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm < rel_tol * norm0 {
            out.push(name.clone());
        } else {
            basis.push(v / norm);
        }
    }
    out
}

/// Prepends a column of ones.
pub(crate) fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut out = DMatrix::from_element(n, x.ncols() + 1, 1.0);
    out.view_mut((0, 1), (n, x.ncols())).copy_from(x);
    out
}
