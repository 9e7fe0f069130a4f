//! Small dense linear-algebra helpers shared by the filters and the solver.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Replaces `m` with `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * scale))
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eigenvalues(m)
        .into_iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Checks that `m` is square, symmetric and has no eigenvalue below `-tol·max(1, ‖m‖)`.
pub fn check_psd(name: &str, m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("{name} must be square")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter(format!("{name} has non-finite entries")));
    }
    if !is_symmetric(m, 1e-9) {
        return Err(Error::Parameter(format!("{name} must be symmetric")));
    }
    let scale = m.amax().max(1.0);
    if min_eigenvalue(m) < -tol * scale {
        return Err(Error::NotPositiveDefinite(format!(
            "{name} must be positive semidefinite"
        )));
    }
    Ok(())
}

/// A square-root factor `S` with `S Sᵀ = m` for a symmetric PSD matrix.
///
/// Uses the eigen-decomposition so that singular (e.g. all-zero) covariances
/// are accepted; negative round-off eigenvalues are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let mut s = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let root = lambda.max(0.0).sqrt();
        s.column_mut(j).scale_mut(root);
    }
    s
}

/// Solves `h x = rhs` for symmetric positive-definite `h`.
pub fn spd_solve(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("cholesky factorization failed".into()))?;
    Ok(chol.solve(rhs))
}

/// Inverse of a symmetric positive-definite matrix, symmetrized.
pub fn spd_inverse(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("cholesky factorization failed".into()))?;
    Ok(symmetrized(chol.inverse()))
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}
