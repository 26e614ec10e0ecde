//! Full `2^L` Hilbert-space reference operators built from Kronecker
//! products, independent of the sector code paths under test.
//!
//! Site `j` (1-based) is the `2^{j−1}` bit of the full-space index; local
//! index 1 is spin up (`σ^z = +1`).

#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use qsd_magic::hamiltonian::SykCouplings;
use qsd_magic::{StateVector, SubspaceBasis};

pub type CMat = DMatrix<Complex64>;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn sigma_z() -> CMat {
    CMat::from_row_slice(2, 2, &[c(-1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)])
}

/// `|↓⟩ → |↑⟩`.
pub fn sigma_plus() -> CMat {
    CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)])
}

pub fn sigma_minus() -> CMat {
    sigma_plus().adjoint()
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// `op` on `site` (1-based) of an `l`-site chain: `1 ⊗ … ⊗ op ⊗ … ⊗ 1`
/// with site `l` leftmost.
pub fn site_op(op: &CMat, site: usize, l: usize) -> CMat {
    let mut out = identity(1);
    for s in (1..=l).rev() {
        let factor = if s == site { op.clone() } else { identity(2) };
        out = out.kronecker(&factor);
    }
    out
}

pub fn xxz_full(l: usize, j: f64, v: f64, w: f64, stagger_origin_one: bool) -> CMat {
    let dim = 1 << l;
    let mut h = CMat::zeros(dim, dim);
    let sp: Vec<CMat> = (1..=l).map(|s| site_op(&sigma_plus(), s, l)).collect();
    let sm: Vec<CMat> = (1..=l).map(|s| site_op(&sigma_minus(), s, l)).collect();
    let sz: Vec<CMat> = (1..=l).map(|s| site_op(&sigma_z(), s, l)).collect();
    for site in 1..=l {
        let a = site - 1;
        let b = site % l;
        h += (&sp[a] * &sm[b] + &sm[a] * &sp[b]) * c(j / 2.0, 0.0);
        h += &sz[a] * &sz[b] * c(v / 4.0, 0.0);
        let exponent = if stagger_origin_one { site } else { site - 1 };
        let sign = if exponent % 2 == 0 { 1.0 } else { -1.0 };
        h += &sz[a] * c(sign * w / 2.0, 0.0);
    }
    h
}

/// Jordan–Wigner creation operator `(Π_{l<i} σ^z_l) σ^+_i`.
pub fn jw_creation(site: usize, l: usize) -> CMat {
    let mut op = site_op(&sigma_plus(), site, l);
    for s in 1..site {
        op = site_op(&sigma_z(), s, l) * op;
    }
    op
}

/// `L^{−3/2} Σ_{ijkl} J_{ij,kl} c†_i c†_j c_k c_l` over the full tensor.
pub fn syk_full(couplings: &SykCouplings) -> CMat {
    let l = couplings.sites;
    let dim = 1 << l;
    let tensor = couplings.full_tensor().expect("valid couplings");
    let cd: Vec<CMat> = (1..=l).map(|s| jw_creation(s, l)).collect();
    let cc: Vec<CMat> = cd.iter().map(|m| m.adjoint()).collect();
    let mut h = CMat::zeros(dim, dim);
    for i in 0..l {
        for j in 0..l {
            let pair = &cd[i] * &cd[j];
            for k in 0..l {
                for m in 0..l {
                    let coeff = tensor[((i * l + j) * l + k) * l + m];
                    if coeff.norm() == 0.0 {
                        continue;
                    }
                    h += &pair * &cc[k] * &cc[m] * coeff;
                }
            }
        }
    }
    h * c((l as f64).powf(-1.5), 0.0)
}

/// Sector block of a full-space operator, in the basis order of `basis`.
pub fn restrict(full: &CMat, basis: &SubspaceBasis) -> CMat {
    let n = basis.dim();
    CMat::from_fn(n, n, |r, col| {
        full[(
            basis.config(r).bits() as usize,
            basis.config(col).bits() as usize,
        )]
    })
}

pub fn embed(psi: &StateVector) -> nalgebra::DVector<Complex64> {
    let basis = psi.basis();
    let mut v = nalgebra::DVector::zeros(1 << basis.sites());
    for (i, a) in psi.amplitudes().iter().enumerate() {
        v[basis.config(i).bits() as usize] = *a;
    }
    v
}

pub fn expectation(op: &CMat, v: &nalgebra::DVector<Complex64>) -> Complex64 {
    (v.adjoint() * op * v)[(0, 0)]
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn eigenvalues(h: &CMat) -> Vec<f64> {
    qsd_magic::linalg::hermitian_eigenvalues(h).unwrap()
}

/// `e^{−iHt} v` through the full-space eigendecomposition.
pub fn evolve_full(
    h: &CMat,
    v: &nalgebra::DVector<Complex64>,
    t: f64,
) -> nalgebra::DVector<Complex64> {
    let (values, q) = qsd_magic::linalg::hermitian_eigen(h).unwrap();
    let mut coeffs = q.adjoint() * v;
    for (k, e) in values.iter().enumerate() {
        coeffs[k] *= Complex64::from_polar(1.0, -e * t);
    }
    &q * coeffs
}

pub fn shared(l: usize) -> Arc<SubspaceBasis> {
    SubspaceBasis::shared(l).unwrap()
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}
