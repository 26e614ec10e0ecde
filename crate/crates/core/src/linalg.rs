//! Dense Hermitian eigendecompositions.
//!
//! Always sequential, so results do not depend on the thread count.

use faer::diag::Diag;
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd::{self, ComputeEigenvectors};
use faer::{Mat, Par};
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

fn evd_impl<T: faer::traits::ComplexField>(
    a: Mat<T>,
    vectors: bool,
) -> Result<(Vec<T>, Option<Mat<T>>)> {
    let n = a.nrows();
    let mut s = Diag::<T>::zeros(n);
    let mut u = vectors.then(|| Mat::<T>::zeros(n, n));
    let compute = if vectors {
        ComputeEigenvectors::Yes
    } else {
        ComputeEigenvectors::No
    };
    let mut buf = MemBuffer::new(evd::self_adjoint_evd_scratch::<T>(
        n,
        compute,
        Par::Seq,
        Default::default(),
    ));
    evd::self_adjoint_evd(
        a.as_ref(),
        s.as_mut(),
        u.as_mut().map(|u| u.as_mut()),
        Par::Seq,
        MemStack::new(&mut buf),
        Default::default(),
    )
    .map_err(|e| Error::NumericalIntegrity(format!("eigendecomposition failed: {e:?}")))?;
    let values = (0..n).map(|i| s[i].clone()).collect();
    Ok((values, u))
}

/// Ascending eigenvalues and eigenvectors (as columns) of a Hermitian matrix.
/// Only the lower triangle is read.
pub fn hermitian_eigen(h: &DMatrix<Complex64>) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
    let n = h.nrows();
    let a = Mat::<faer::c64>::from_fn(n, n, |r, c| h[(r, c)]);
    let (values, u) = evd_impl(a, true)?;
    let u = u.expect("vectors requested");
    Ok((
        values.iter().map(|z| z.re).collect(),
        DMatrix::from_fn(n, n, |r, c| u[(r, c)]),
    ))
}

pub fn hermitian_eigenvalues(h: &DMatrix<Complex64>) -> Result<Vec<f64>> {
    let n = h.nrows();
    let a = Mat::<faer::c64>::from_fn(n, n, |r, c| h[(r, c)]);
    Ok(evd_impl(a, false)?.0.iter().map(|z| z.re).collect())
}

/// Real symmetric version of [`hermitian_eigen`].
pub fn symmetric_eigen(h: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = h.nrows();
    let a = Mat::<f64>::from_fn(n, n, |r, c| h[(r, c)]);
    let (values, u) = evd_impl(a, true)?;
    let u = u.expect("vectors requested");
    Ok((values, DMatrix::from_fn(n, n, |r, c| u[(r, c)])))
}
