//! Dense symmetric eigendecomposition backed by faer, whose eigenvectors
//! stay accurate on nearly diagonal input.

use nalgebra::{DMatrix, DVector};

pub struct SymEigen {
    /// Ascending.
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

/// Eigenpairs of the symmetric part of `m`.
pub fn sym_eigen(m: &DMatrix<f64>) -> SymEigen {
    let n = m.nrows();
    let fm = faer::Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    let evd = fm.selfadjoint_eigendecomposition(faer::Side::Lower);
    let (u, s) = (evd.u(), evd.s().column_vector());
    SymEigen {
        eigenvalues: DVector::from_fn(n, |i, _| s.read(i)),
        eigenvectors: DMatrix::from_fn(n, n, |i, j| u.read(i, j)),
    }
}
