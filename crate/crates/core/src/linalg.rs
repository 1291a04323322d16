use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor (against the trace) below which a symmetric
/// matrix is treated as singular.
pub(crate) const SINGULAR_REL_TOL: f64 = 1e-12;

/// Checks that a symmetric matrix is positive definite with smallest
/// eigenvalue above `SINGULAR_REL_TOL * trace`, and returns its Cholesky
/// factor.
pub(crate) fn spd_factor(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Dimension(format!("{what}: expected a square matrix")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData(format!("{what}: non-finite entry")));
    }
    let trace = m.trace();
    let min_eig = SymmetricEigen::new(m.clone()).eigenvalues.min();
    if !(trace > 0.0) || min_eig <= SINGULAR_REL_TOL * trace {
        return Err(Error::Singular(format!(
            "{what}: smallest eigenvalue {min_eig:e} vs trace {trace:e}"
        )));
    }
    Cholesky::new(m.clone())
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

pub(crate) fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    Ok(spd_factor(m, what)?.solve(rhs))
}

pub(crate) fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let inv = spd_factor(m, what)?.inverse();
    Ok(symmetrize(inv))
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Lower-right `p x p` block of a square matrix.
pub(crate) fn lower_right(m: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let k = m.nrows();
    m.view((k - p, k - p), (p, p)).into_owned()
}
