//! Random reference states in the zero-magnetization sector.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::hilbert::{StateVector, SubspaceBasis};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RandomStateKind {
    /// Equal moduli `1/√N_L`, i.i.d. uniform phases.
    Phase,
    /// Uniform on the unit sphere of the sector.
    Haar,
}

/// `(1/√N_L) Σ_s e^{−iφ_s} |s⟩` with `φ_s` uniform in `[0, 2π)`.
pub fn random_phase_state<R: Rng + ?Sized>(basis: &Arc<SubspaceBasis>, rng: &mut R) -> StateVector {
    let n = basis.dim();
    let modulus = 1.0 / (n as f64).sqrt();
    let amps = (0..n)
        .map(|_| {
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            Complex64::from_polar(modulus, -phi)
        })
        .collect();
    StateVector::from_raw(basis.clone(), amps)
}

/// Haar-random sector state from a normalized complex Gaussian vector.
pub fn haar_state<R: Rng + ?Sized>(basis: &Arc<SubspaceBasis>, rng: &mut R) -> StateVector {
    let amps = (0..basis.dim())
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re, im)
        })
        .collect();
    StateVector::from_amplitudes(basis.clone(), amps).expect("Gaussian vector is nonzero")
}

pub fn random_state<R: Rng + ?Sized>(
    kind: RandomStateKind,
    basis: &Arc<SubspaceBasis>,
    rng: &mut R,
) -> StateVector {
    match kind {
        RandomStateKind::Phase => random_phase_state(basis, rng),
        RandomStateKind::Haar => haar_state(basis, rng),
    }
}
