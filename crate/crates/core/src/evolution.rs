//! Real-time propagation `ψ ↦ e^{−iHδt} ψ` by full diagonalization or by a
//! restarted Lanczos (Krylov) approximation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hamiltonian::HamiltonianOperator;
use crate::hilbert::StateVector;
use crate::linalg::{hermitian_eigen, symmetric_eigen};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Sector dimension up to which [`PropagatorMode::Auto`] diagonalizes.
pub const AUTO_EIG_MAX_DIM: usize = 1000;
pub const DEFAULT_KRYLOV_DIM: usize = 30;
pub const DEFAULT_KRYLOV_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PropagatorMode {
    Eig,
    Krylov,
    #[default]
    Auto,
}

/// Spectral data or Krylov settings for a fixed Hamiltonian.
#[derive(Clone, Debug)]
pub enum Propagator {
    Eig {
        hamiltonian: Arc<HamiltonianOperator>,
        /// Ascending eigenvalues.
        values: Vec<f64>,
        /// Eigenvectors as columns, matching `values`.
        vectors: DMatrix<Complex64>,
    },
    Krylov {
        hamiltonian: Arc<HamiltonianOperator>,
        dim: usize,
        tol: f64,
    },
}

/// Builds a propagator. `krylov_dim` and `tol` only affect Krylov mode.
pub fn make_propagator(
    hamiltonian: Arc<HamiltonianOperator>,
    mode: PropagatorMode,
    krylov_dim: Option<usize>,
    tol: Option<f64>,
) -> Result<Propagator> {
    let scale = hamiltonian
        .dense()
        .iter()
        .map(|z| z.norm())
        .fold(1.0, f64::max);
    let defect = hamiltonian.hermiticity_defect();
    if defect > 1e-10 * scale {
        return invalid(format!("Hamiltonian is not Hermitian (defect {defect:e})"));
    }
    let mode = match mode {
        PropagatorMode::Auto if hamiltonian.dim() <= AUTO_EIG_MAX_DIM => PropagatorMode::Eig,
        PropagatorMode::Auto => PropagatorMode::Krylov,
        m => m,
    };
    match mode {
        PropagatorMode::Eig => {
            let (values, vectors) = hermitian_eigen(hamiltonian.dense())?;
            Ok(Propagator::Eig {
                hamiltonian,
                values,
                vectors,
            })
        }
        _ => {
            let dim = krylov_dim.unwrap_or(DEFAULT_KRYLOV_DIM);
            let tol = tol.unwrap_or(DEFAULT_KRYLOV_TOL);
            if dim == 0 || !(tol > 0.0) {
                return invalid("Krylov dimension and tolerance must be positive");
            }
            Ok(Propagator::Krylov {
                hamiltonian,
                dim,
                tol,
            })
        }
    }
}

impl Propagator {
    pub fn hamiltonian(&self) -> &Arc<HamiltonianOperator> {
        match self {
            Propagator::Eig { hamiltonian, .. } | Propagator::Krylov { hamiltonian, .. } => {
                hamiltonian
            }
        }
    }

    pub fn is_eig(&self) -> bool {
        matches!(self, Propagator::Eig { .. })
    }

    /// Ascending eigenvalues (eig mode only).
    pub fn eigenvalues(&self) -> Option<&[f64]> {
        match self {
            Propagator::Eig { values, .. } => Some(values),
            Propagator::Krylov { .. } => None,
        }
    }

    /// Returns `e^{−iH dt} ψ`.
    pub fn apply_unitary(&self, psi: &StateVector, dt: f64) -> StateVector {
        let amps = match self {
            Propagator::Eig {
                values, vectors, ..
            } => {
                let v = DVector::from_column_slice(psi.amplitudes());
                let mut coeffs = vectors.ad_mul(&v);
                for (c, &e) in coeffs.iter_mut().zip(values) {
                    *c *= Complex64::from_polar(1.0, -e * dt);
                }
                (vectors * coeffs).as_slice().to_vec()
            }
            Propagator::Krylov {
                hamiltonian,
                dim,
                tol,
            } => krylov_expm(hamiltonian, psi.amplitudes(), dt, *dim, *tol),
        };
        StateVector::from_raw(psi.basis().clone(), amps)
    }

    /// Precomputes the step `e^{−iH dt}` for repeated use with a fixed `dt`.
    /// In eig mode this is a dense unitary matrix; Krylov mode defers to
    /// [`Propagator::apply_unitary`].
    pub fn fixed_step(&self, dt: f64) -> UnitaryStep<'_> {
        match self {
            Propagator::Eig {
                values, vectors, ..
            } => {
                let phases = DVector::from_iterator(
                    values.len(),
                    values.iter().map(|&e| Complex64::from_polar(1.0, -e * dt)),
                );
                let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |r, c| {
                    vectors[(r, c)] * phases[c]
                });
                UnitaryStep::Dense(scaled * vectors.adjoint())
            }
            Propagator::Krylov { .. } => UnitaryStep::Krylov {
                propagator: self,
                dt,
            },
        }
    }
}

/// A time step of fixed length, ready to be applied many times.
#[derive(Clone, Debug)]
pub enum UnitaryStep<'a> {
    Dense(DMatrix<Complex64>),
    Krylov { propagator: &'a Propagator, dt: f64 },
}

impl UnitaryStep<'_> {
    pub fn apply(&self, psi: &StateVector) -> StateVector {
        match self {
            UnitaryStep::Dense(u) => {
                let x = psi.amplitudes();
                let n = x.len();
                let mut out = vec![ZERO; n];
                // column-major: accumulate columns
                for (c, &xc) in x.iter().enumerate() {
                    if xc == ZERO {
                        continue;
                    }
                    let col = u.column(c);
                    for (o, &uc) in out.iter_mut().zip(col.iter()) {
                        *o += uc * xc;
                    }
                }
                StateVector::from_raw(psi.basis().clone(), out)
            }
            UnitaryStep::Krylov { propagator, dt } => propagator.apply_unitary(psi, *dt),
        }
    }
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Lanczos basis and tridiagonal projection of `H` started from `v`.
struct LanczosBasis {
    vectors: Vec<Vec<Complex64>>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    /// Norm of the residual left after the last vector.
    residual: f64,
}

fn lanczos(h: &HamiltonianOperator, v: &[Complex64], max_dim: usize) -> LanczosBasis {
    let n = v.len();
    let start_norm = norm(v);
    let mut vectors: Vec<Vec<Complex64>> = vec![v.iter().map(|x| x / start_norm).collect()];
    let mut alpha = Vec::new();
    let mut beta = Vec::new();
    let mut w = vec![ZERO; n];
    let breakdown = 1e-13;
    let mut scale: f64 = 1.0;
    loop {
        let k = vectors.len() - 1;
        h.matvec_into(&vectors[k], &mut w);
        if k > 0 {
            let b = beta[k - 1];
            for (wi, pi) in w.iter_mut().zip(&vectors[k - 1]) {
                *wi -= pi * b;
            }
        }
        let a = dot(&vectors[k], &w).re;
        for (wi, vi) in w.iter_mut().zip(&vectors[k]) {
            *wi -= vi * a;
        }
        // full reorthogonalization, done twice so that near-breakdown steps
        // (small β) stay orthonormal in finite precision
        for _ in 0..2 {
            for q in &vectors {
                let overlap = dot(q, &w);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= qi * overlap;
                }
            }
        }
        alpha.push(a);
        scale = scale.max(a.abs());
        let b = norm(&w);
        if vectors.len() == max_dim || vectors.len() == n || b < breakdown * scale {
            return LanczosBasis {
                vectors,
                alpha,
                beta,
                residual: if b < breakdown * scale { 0.0 } else { b },
            };
        }
        beta.push(b);
        scale = scale.max(b);
        vectors.push(w.iter().map(|x| x / b).collect());
    }
}

/// `e^{−iTτ} e₁` for the real symmetric tridiagonal `T`, via its spectrum.
struct TridiagonalExp {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl TridiagonalExp {
    fn new(alpha: &[f64], beta: &[f64]) -> Self {
        let m = alpha.len();
        let t = DMatrix::from_fn(m, m, |r, c| {
            if r == c {
                alpha[r]
            } else if r + 1 == c {
                beta[r]
            } else if c + 1 == r {
                beta[c]
            } else {
                0.0
            }
        });
        // a few dozen rows; the QR iteration cannot run out of sweeps here
        let (values, vectors) = symmetric_eigen(&t).expect("tridiagonal eigendecomposition");
        Self { values, vectors }
    }

    fn first_column(&self, tau: f64) -> Vec<Complex64> {
        let m = self.values.len();
        (0..m)
            .map(|r| {
                (0..m)
                    .map(|k| {
                        Complex64::from_polar(
                            self.vectors[(r, k)] * self.vectors[(0, k)],
                            -self.values[k] * tau,
                        )
                    })
                    .sum()
            })
            .collect()
    }
}

/// Restarted Lanczos evaluation of `e^{−iH t} v` with adaptive sub-steps.
fn krylov_expm(
    h: &HamiltonianOperator,
    v: &[Complex64],
    t: f64,
    max_dim: usize,
    tol: f64,
) -> Vec<Complex64> {
    let mut current = v.to_vec();
    let mut remaining = t;
    let mut tau = t;
    while remaining > 0.0 {
        let scale = norm(&current);
        if scale == 0.0 {
            return current;
        }
        let basis = lanczos(h, &current, max_dim);
        let small = TridiagonalExp::new(&basis.alpha, &basis.beta);
        tau = tau.min(remaining);
        let coeffs = loop {
            let y = small.first_column(tau);
            let err = basis.residual * y.last().map_or(0.0, |z| z.norm()) * tau.abs().max(1.0);
            if err <= tol || tau < 1e-12 * t.abs() {
                break y;
            }
            tau *= 0.5;
        };
        let mut next = vec![ZERO; current.len()];
        for (c, q) in coeffs.iter().zip(&basis.vectors) {
            let c = c * scale;
            for (o, qi) in next.iter_mut().zip(q) {
                *o += qi * c;
            }
        }
        current = next;
        remaining -= tau;
        if remaining < 1e-15 * t.abs() {
            break;
        }
        tau *= 2.0;
    }
    current
}
