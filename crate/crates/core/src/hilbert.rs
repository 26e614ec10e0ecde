//! Zero-magnetization sector of an even chain of spin-1/2 sites.
//!
//! Site `j` (1-based) lives in bit `j - 1` of a [`SpinConfig`]; a set bit is
//! a spin up (`s_j = +1`), a cleared bit a spin down (`s_j = -1`).

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{invalid, Result};

/// Largest chain length supported by the enumerator.
pub const MAX_SITES: usize = 16;

/// A computational-basis configuration packed into an `L`-bit word.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpinConfig(pub u32);

impl SpinConfig {
    #[inline]
    pub fn bits(self) -> u32 {
        self.0
    }

    /// `true` when site `j` (1-based) is spin up.
    #[inline]
    pub fn is_up(self, site: usize) -> bool {
        (self.0 >> (site - 1)) & 1 == 1
    }

    /// Eigenvalue `s_j = ±1` of `σ^z_j` (1-based site).
    #[inline]
    pub fn sz(self, site: usize) -> f64 {
        if self.is_up(site) {
            1.0
        } else {
            -1.0
        }
    }

    #[inline]
    pub fn popcount(self) -> u32 {
        self.0.count_ones()
    }
}

impl fmt::Debug for SpinConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpinConfig({:#b})", self.0)
    }
}

/// Binomial coefficient table `C(n, k)` for `n, k <= MAX_SITES`.
fn binomial_table() -> [[u64; MAX_SITES + 1]; MAX_SITES + 1] {
    let mut table = [[0u64; MAX_SITES + 1]; MAX_SITES + 1];
    for n in 0..=MAX_SITES {
        table[n][0] = 1;
        for k in 1..=n {
            table[n][k] = table[n - 1][k - 1] + if k <= n - 1 { table[n - 1][k] } else { 0 };
        }
    }
    table
}

pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n || n > MAX_SITES {
        return 0;
    }
    binomial_table()[n][k]
}

/// Ordered basis of the `S^z = 0` sector.
///
/// Configurations are kept in ascending integer order, which for a fixed
/// popcount coincides with colexicographic order of the set-bit positions.
/// That lets [`SubspaceBasis::rank`] use the combinatorial number system.
#[derive(Clone, PartialEq, Eq)]
pub struct SubspaceBasis {
    sites: usize,
    configs: Vec<SpinConfig>,
    binom: [[u64; MAX_SITES + 1]; MAX_SITES + 1],
}

impl fmt::Debug for SubspaceBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SubspaceBasis")
            .field("sites", &self.sites)
            .field("dim", &self.configs.len())
            .finish()
    }
}

impl SubspaceBasis {
    /// Enumerates all configurations of `sites` spins with zero magnetization.
    pub fn new(sites: usize) -> Result<Self> {
        if sites < 2 || sites > MAX_SITES || sites % 2 != 0 {
            return invalid(format!(
                "number of sites must be even and in [2, {MAX_SITES}], got {sites}"
            ));
        }
        let half = (sites / 2) as u32;
        let configs: Vec<SpinConfig> = (0u32..(1u32 << sites))
            .filter(|c| c.count_ones() == half)
            .map(SpinConfig)
            .collect();
        Ok(Self {
            sites,
            configs,
            binom: binomial_table(),
        })
    }

    /// Convenience constructor returning a shareable handle.
    pub fn shared(sites: usize) -> Result<Arc<Self>> {
        Self::new(sites).map(Arc::new)
    }

    #[inline]
    pub fn sites(&self) -> usize {
        self.sites
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.configs.len()
    }

    #[inline]
    pub fn configs(&self) -> &[SpinConfig] {
        &self.configs
    }

    #[inline]
    pub fn config(&self, index: usize) -> SpinConfig {
        self.configs[index]
    }

    /// `true` when `config` fits in `L` bits and has zero magnetization.
    #[inline]
    pub fn contains(&self, config: SpinConfig) -> bool {
        (config.0 >> self.sites) == 0 && config.popcount() as usize * 2 == self.sites
    }

    /// Position of `config` in the ascending enumeration.
    pub fn rank(&self, config: SpinConfig) -> Result<usize> {
        if !self.contains(config) {
            return invalid(format!(
                "{config:?} is not in the zero-magnetization sector of L={}",
                self.sites
            ));
        }
        Ok(self.rank_unchecked(config))
    }

    /// Rank without the sector check. Caller guarantees membership.
    #[inline]
    pub fn rank_unchecked(&self, config: SpinConfig) -> usize {
        let mut bits = config.0;
        let mut rank = 0u64;
        let mut k = 1;
        while bits != 0 {
            let pos = bits.trailing_zeros() as usize;
            rank += self.binom[pos][k];
            k += 1;
            bits &= bits - 1;
        }
        rank as usize
    }

    /// Inverse of [`SubspaceBasis::rank`], computed greedily from the top bit.
    pub fn unrank(&self, index: usize) -> Result<SpinConfig> {
        if index >= self.dim() {
            return invalid(format!(
                "index {index} out of range for dimension {}",
                self.dim()
            ));
        }
        let mut remaining = index as u64;
        let mut bits = 0u32;
        let mut k = self.sites / 2;
        let mut pos = self.sites;
        while k > 0 {
            pos -= 1;
            let c = self.binom[pos][k];
            if remaining >= c {
                bits |= 1 << pos;
                remaining -= c;
                k -= 1;
            }
        }
        Ok(SpinConfig(bits))
    }

    /// The Néel configuration `|↑,↓,↑,↓,…⟩`: odd sites up, even sites down.
    pub fn neel_config(&self) -> SpinConfig {
        let bits = (0..self.sites)
            .step_by(2)
            .fold(0u32, |acc, b| acc | (1 << b));
        SpinConfig(bits)
    }
}

/// Normalized amplitude vector over a [`SubspaceBasis`].
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    basis: Arc<SubspaceBasis>,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// Wraps `amps` after normalizing them. Fails on a dimension mismatch or a
    /// vanishing vector.
    pub fn from_amplitudes(basis: Arc<SubspaceBasis>, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != basis.dim() {
            return invalid(format!(
                "amplitude count {} does not match sector dimension {}",
                amps.len(),
                basis.dim()
            ));
        }
        let mut state = Self { basis, amps };
        let norm = state.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return invalid("state has zero or non-finite norm");
        }
        state.scale(1.0 / norm);
        Ok(state)
    }

    pub(crate) fn from_raw(basis: Arc<SubspaceBasis>, amps: Vec<Complex64>) -> Self {
        debug_assert_eq!(amps.len(), basis.dim());
        Self { basis, amps }
    }

    /// Computational-basis state on a single sector configuration.
    pub fn basis_state(basis: Arc<SubspaceBasis>, config: SpinConfig) -> Result<Self> {
        let index = basis.rank(config)?;
        let mut amps = vec![Complex64::new(0.0, 0.0); basis.dim()];
        amps[index] = Complex64::new(1.0, 0.0);
        Ok(Self { basis, amps })
    }

    /// Néel product state `|↑,↓,↑,↓,…⟩`.
    pub fn neel(basis: Arc<SubspaceBasis>) -> Self {
        let config = basis.neel_config();
        Self::basis_state(basis, config).expect("Néel configuration lies in the sector")
    }

    #[inline]
    pub fn basis(&self) -> &Arc<SubspaceBasis> {
        &self.basis
    }

    #[inline]
    pub fn sites(&self) -> usize {
        self.basis.sites()
    }

    #[inline]
    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    #[inline]
    pub(crate) fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        for a in &mut self.amps {
            *a *= factor;
        }
    }

    /// Rescales to unit norm, returning the norm before rescaling.
    pub(crate) fn renormalize(&mut self) -> f64 {
        let norm = self.norm();
        if norm > 0.0 {
            self.scale(1.0 / norm);
        }
        norm
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Euclidean distance `‖self − other‖`.
    pub fn distance(&self, other: &StateVector) -> f64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Multiplies every amplitude by `e^{iφ}`.
    pub fn with_global_phase(mut self, phi: f64) -> Self {
        let phase = Complex64::from_polar(1.0, phi);
        for a in &mut self.amps {
            *a *= phase;
        }
        self
    }
}
