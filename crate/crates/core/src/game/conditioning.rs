//! Eigenvalue shift that keeps policy covariances positive definite.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub const DEFAULT_EPS_PSD: f64 = 1e-6;
const SYMMETRY_TOL: f64 = 1e-9;
/// Deficits at or below this are treated as already conditioned, which makes
/// conditioning exactly idempotent despite eigen-solver roundoff.
const SHIFT_SLACK: f64 = 1e-13;

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::validation(
            "matrix",
            format!("expected square matrix, got {:?}", m.shape()),
        ));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("matrix", "non-finite entry"));
    }
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL * m.amax().max(1.0) {
        return Err(Error::validation(
            "matrix",
            format!("not symmetric (max |M - Mᵀ| = {asym:e})"),
        ));
    }
    Ok(())
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    check_symmetric(m)?;
    Ok(SymmetricEigen::new(m.clone()).eigenvalues.min())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conditioned {
    pub sigma: DMatrix<f64>,
    /// Uniform diagonal shift that was added (0 when already conditioned).
    pub shift: f64,
    pub min_eigenvalue_before: f64,
}

/// Adds the smallest uniform diagonal shift `s·I` that lifts the spectrum of
/// `sigma_raw` to at least `eps_psd`.
pub fn condition_covariance(sigma_raw: &DMatrix<f64>, eps_psd: f64) -> Result<Conditioned> {
    if !(eps_psd > 0.0 && eps_psd.is_finite()) {
        return Err(Error::validation("eps_psd", format!("must be > 0, got {eps_psd}")));
    }
    let lambda = min_eigenvalue(sigma_raw)?;
    let deficit = eps_psd - lambda;
    let shift = if deficit > SHIFT_SLACK { deficit } else { 0.0 };
    let mut sigma = sigma_raw.clone();
    if shift > 0.0 {
        for j in 0..sigma.nrows() {
            sigma[(j, j)] += shift;
        }
    }
    Ok(Conditioned {
        sigma,
        shift,
        min_eigenvalue_before: lambda,
    })
}

/// Moore-Penrose inverse of a symmetric matrix, dropping eigenvalues with
/// magnitude at or below `cutoff`.
pub fn symmetric_pinv(m: &DMatrix<f64>, cutoff: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut out = DMatrix::<f64>::zeros(n, n);
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > cutoff {
            let v = eig.eigenvectors.column(j);
            out += (v * v.transpose()) / *lambda;
        }
    }
    out
}
