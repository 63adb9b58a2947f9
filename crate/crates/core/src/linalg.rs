//! Small dense Hermitian linear algebra used by the per-frequency estimators.
//!
//! Matrices here are tiny (channel count or stacked tap count), so everything
//! goes through nalgebra's dense Cholesky / eigendecomposition after a copy
//! out of the ndarray views the rest of the crate works with.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub(crate) fn to_na(a: ArrayView2<Complex64>) -> DMatrix<Complex64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

pub(crate) fn from_na(m: &DMatrix<Complex64>) -> Array2<Complex64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Trace of a square complex matrix.
pub fn trace(a: ArrayView2<Complex64>) -> Complex64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

/// Symmetrize as (A + A^H)/2, forcing exact Hermitian structure.
pub fn hermitianize(a: &mut Array2<Complex64>) {
    let n = a.nrows();
    for i in 0..n {
        a[(i, i)] = Complex64::new(a[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)].conj());
            a[(i, j)] = m;
            a[(j, i)] = m.conj();
        }
    }
}

/// Add `loading * trace(A)/n` to the diagonal.
pub fn diagonal_load(a: &mut Array2<Complex64>, loading: f64) {
    let n = a.nrows();
    let t = trace(a.view()).re / n as f64;
    let shift = Complex64::new(loading * t, 0.0);
    for i in 0..n {
        a[(i, i)] += shift;
    }
}

/// Cholesky factorization of a Hermitian positive definite matrix.
///
/// Wraps the factor so callers can run several solves, the inverse and the
/// log-determinant off one decomposition.
pub struct HermitianCholesky {
    chol: nalgebra::Cholesky<Complex64, nalgebra::Dyn>,
}

impl HermitianCholesky {
    pub fn new(a: ArrayView2<Complex64>) -> Result<Self> {
        let m = to_na(a);
        match m.cholesky() {
            Some(chol) => Ok(Self { chol }),
            None => Err(Error::numerical("matrix not positive definite")),
        }
    }

    /// Factor `A`, retrying once with diagonal loading if the plain
    /// factorization fails. Returns the facterization and whether loading
    /// was applied.
    pub fn new_loaded(a: ArrayView2<Complex64>, loading: f64) -> Result<(Self, bool)> {
        if let Ok(c) = Self::new(a) {
            return Ok((c, false));
        }
        let mut loaded = a.to_owned();
        diagonal_load(&mut loaded, loading);
        Self::new(loaded.view()).map(|c| (c, true))
    }

    pub fn ln_determinant(&self) -> f64 {
        self.chol.ln_determinant()
    }

    pub fn inverse(&self) -> Array2<Complex64> {
        from_na(&self.chol.inverse())
    }

    /// Solve `A x = b` for a single right-hand side.
    pub fn solve_vec(&self, b: &Array1<Complex64>) -> Array1<Complex64> {
        let rhs = nalgebra::DVector::from_iterator(b.len(), b.iter().cloned());
        let x = self.chol.solve(&rhs);
        Array1::from_iter(x.iter().cloned())
    }

    /// Solve `A X = B` for a matrix right-hand side.
    pub fn solve_mat(&self, b: ArrayView2<Complex64>) -> Array2<Complex64> {
        let rhs = to_na(b);
        let x = self.chol.solve(&rhs);
        from_na(&x)
    }
}

/// Quadratic form `y^H A y` (real part; exact for Hermitian A).
pub fn quadratic_form(a: ArrayView2<Complex64>, y: &[Complex64]) -> f64 {
    let n = a.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        let mut row = Complex64::new(0.0, 0.0);
        for j in 0..n {
            row += a[(i, j)] * y[j];
        }
        acc += y[i].conj() * row;
    }
    acc.re
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(a: ArrayView2<Complex64>) -> Array1<f64> {
    let eig = to_na(a).symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Array1::from_vec(vals)
}

/// Unit-norm eigenvector for the largest eigenvalue of a Hermitian matrix.
pub fn principal_eigenvector(a: ArrayView2<Complex64>) -> Array1<Complex64> {
    let eig = to_na(a).symmetric_eigen();
    let mut best = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    let col = eig.eigenvectors.column(best);
    let norm = col.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    Array1::from_iter(col.iter().map(|c| c / norm))
}

/// Spectral radius of a complex square matrix via its real embedding.
///
/// The 2n x 2n real matrix [[Re, -Im], [Im, Re]] has the eigenvalues of A
/// together with their conjugates, so the radius carries over.
pub fn spectral_radius(a: ArrayView2<Complex64>) -> f64 {
    let n = a.nrows();
    let mut r = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let v = a[(i, j)];
            r[(i, j)] = v.re;
            r[(i, j + n)] = -v.im;
            r[(i + n, j)] = v.im;
            r[(i + n, j + n)] = v.re;
        }
    }
    r.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}
