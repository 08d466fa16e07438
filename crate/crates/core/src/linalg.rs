//! Small dense symmetric helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{BoundsError, Result};
use crate::layout;

/// Condition numbers above this are reported as singular.
pub const MAX_CONDITION: f64 = 1e14;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// `min eig(m) >= -rel_tol * max(trace, 0)`.
pub fn is_psd(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    let trace = m.trace().max(0.0);
    min_eigenvalue(m) >= -rel_tol * trace
}

/// Inverse of a symmetric positive-definite matrix, symmetrized.
///
/// Fails with [`BoundsError::SingularFim`] when the spectral condition number
/// exceeds [`MAX_CONDITION`] or the matrix is not positive definite. The
/// reported block is the joint-state block carrying the largest weight in
/// the weakest eigenvector. The step index is filled in by the caller.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym.clone());
    let (imin, &lmin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(BoundsError::DimensionMismatch {
            expected: 1,
            got: 0,
        })?;
    let lmax = eig.eigenvalues.max();
    let condition = if lmin > 0.0 {
        lmax / lmin
    } else {
        f64::INFINITY
    };
    if !(condition <= MAX_CONDITION) {
        let v = eig.eigenvectors.column(imin);
        let worst = v.iamax();
        return Err(BoundsError::SingularFim {
            step: 0,
            block: layout::block_name(worst),
            condition,
        });
    }
    let chol = sym.cholesky().ok_or_else(|| BoundsError::SingularFim {
        step: 0,
        block: "unknown".into(),
        condition,
    })?;
    Ok(symmetrize(&chol.inverse()))
}
