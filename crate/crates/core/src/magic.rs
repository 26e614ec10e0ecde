//! Stabilizer Rényi entropy `M₂ = −ln[(1/2^L) Σ_P ⟨ψ|P|ψ⟩⁴]` of sector states.
//!
//! A Pauli string has exactly one nonzero matrix element per row: the
//! configuration `c` couples only to its partner `c ⊕ flip_mask`. The
//! expectation value is therefore a single sum over sector configurations.
//! [`sre`] groups strings sharing a flip mask: for fixed flip mask the phase
//! depends on the `Y/Z` mask only through a parity, so all `2^L` expectation
//! values of the group follow from one Walsh-Hadamard transform of the
//! partner products `C*_c C_{c⊕flip}`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{SpinConfig, StateVector};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Raw imaginary residue tolerated in a Pauli expectation.
pub const IMAG_RESIDUE_TOL: f64 = 1e-8;
/// Largest chain the dense oracle accepts.
pub const DENSE_ORACLE_MAX_SITES: usize = 8;
/// Largest chain [`sre`] accepts.
pub const SRE_MAX_SITES: usize = 14;

/// Single-site Pauli label `σ^α`, `α ∈ {0: I, 1: X, 2: Y, 3: Z}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Pauli::I),
            1 => Some(Pauli::X),
            2 => Some(Pauli::Y),
            3 => Some(Pauli::Z),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Pauli::I => 0,
            Pauli::X => 1,
            Pauli::Y => 2,
            Pauli::Z => 3,
        }
    }
}

/// Pauli string stored as a flip mask (`X` or `Y`) and a `Y`-or-`Z` mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PauliString {
    sites: usize,
    flip: u32,
    y_or_z: u32,
}

impl PauliString {
    pub fn new(sites: usize, flip: u32, y_or_z: u32) -> Self {
        let mask = if sites >= 32 {
            u32::MAX
        } else {
            (1u32 << sites) - 1
        };
        debug_assert!(flip & !mask == 0 && y_or_z & !mask == 0);
        Self {
            sites,
            flip: flip & mask,
            y_or_z: y_or_z & mask,
        }
    }

    pub fn identity(sites: usize) -> Self {
        Self::new(sites, 0, 0)
    }

    /// Builds a string from one label per site, site 1 first.
    pub fn from_paulis(paulis: &[Pauli]) -> Self {
        let (mut flip, mut yz) = (0u32, 0u32);
        for (b, p) in paulis.iter().enumerate() {
            if matches!(p, Pauli::X | Pauli::Y) {
                flip |= 1 << b;
            }
            if matches!(p, Pauli::Y | Pauli::Z) {
                yz |= 1 << b;
            }
        }
        Self::new(paulis.len(), flip, yz)
    }

    /// Parses a label such as `"XIZY"` (site 1 first).
    pub fn parse(label: &str) -> Option<Self> {
        let paulis = label
            .chars()
            .map(|ch| match ch {
                'I' => Some(Pauli::I),
                'X' => Some(Pauli::X),
                'Y' => Some(Pauli::Y),
                'Z' => Some(Pauli::Z),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Self::from_paulis(&paulis))
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn flip_mask(&self) -> u32 {
        self.flip
    }

    pub fn y_or_z_mask(&self) -> u32 {
        self.y_or_z
    }

    /// Label on 1-based `site`.
    pub fn at(&self, site: usize) -> Pauli {
        let b = site - 1;
        match ((self.flip >> b) & 1, (self.y_or_z >> b) & 1) {
            (0, 0) => Pauli::I,
            (1, 0) => Pauli::X,
            (1, 1) => Pauli::Y,
            _ => Pauli::Z,
        }
    }

    pub fn paulis(&self) -> Vec<Pauli> {
        (1..=self.sites).map(|s| self.at(s)).collect()
    }
}

/// `(-i)^k`.
#[inline]
fn minus_i_pow(k: u32) -> Complex64 {
    match k % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, -1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, 1.0),
    }
}

/// The unique partner `c'` with `⟨c|P|c'⟩ ≠ 0`, and that element.
///
/// Per site: `I`, `X` give 1; `Z` gives `s_j`; `Y` gives `−i` on an up spin
/// and `+i` on a down spin.
#[inline]
pub fn pauli_matrix_element(config: SpinConfig, p: &PauliString) -> (SpinConfig, Complex64) {
    let partner = SpinConfig(config.0 ^ p.flip);
    let ys = (p.flip & p.y_or_z).count_ones();
    let downs = (p.y_or_z & !config.0).count_ones();
    let sign = if downs % 2 == 0 { 1.0 } else { -1.0 };
    (partner, minus_i_pow(ys) * sign)
}

/// `⟨ψ|P|ψ⟩` by the partner-configuration sum over the sector.
pub fn pauli_expectation(psi: &StateVector, p: &PauliString) -> Result<f64> {
    let basis = psi.basis();
    if p.sites() != basis.sites() {
        return Err(Error::InvalidArgument(format!(
            "Pauli string has {} sites, state has {}",
            p.sites(),
            basis.sites()
        )));
    }
    let amps = psi.amplitudes();
    let mut acc = ZERO;
    if p.flip.count_ones() % 2 == 0 {
        for (&cfg, c) in basis.configs().iter().zip(amps) {
            let (partner, phase) = pauli_matrix_element(cfg, p);
            if !basis.contains(partner) {
                continue;
            }
            acc += phase * c.conj() * amps[basis.rank_unchecked(partner)];
        }
    }
    if acc.im.abs() > IMAG_RESIDUE_TOL {
        return Err(Error::NumericalIntegrity(format!(
            "Pauli expectation has imaginary residue {:e}",
            acc.im
        )));
    }
    Ok(acc.re)
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Normalized Pauli-spectrum moments of a pure state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PauliMoments {
    /// `(1/2^L) Σ_P A_P²`, equal to 1 for every pure state.
    pub second: f64,
    /// `(1/2^L) Σ_P A_P⁴`, the argument of the logarithm in `M₂`.
    pub fourth: f64,
    /// Largest imaginary residue seen in a raw expectation value.
    pub max_imag_residue: f64,
}

/// In-place unnormalized Walsh-Hadamard transform.
fn walsh_hadamard(data: &mut [Complex64]) {
    let n = data.len();
    let mut h = 1;
    while h < n {
        for block in data.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
}

/// Second and fourth moments of `{A_P}` over all `4^L` strings.
///
/// Strings whose flip mask has odd weight are skipped: their partner always
/// leaves the sector. The reduction is deterministic and independent of the
/// number of worker threads.
pub fn pauli_moments(psi: &StateVector) -> Result<PauliMoments> {
    let basis = psi.basis();
    let l = basis.sites();
    if l > SRE_MAX_SITES {
        return Err(Error::Capacity(format!(
            "SRE enumeration supports L <= {SRE_MAX_SITES}, got {l}"
        )));
    }
    let full_dim = 1usize << l;
    let mut full = vec![ZERO; full_dim];
    for (&cfg, &a) in basis.configs().iter().zip(psi.amplitudes()) {
        full[cfg.0 as usize] = a;
    }
    let configs = basis.configs();
    let half = (l / 2) as u32;
    let flips: Vec<u32> = (0..full_dim as u32)
        .filter(|f| f.count_ones() % 2 == 0)
        .collect();

    let per_flip: Vec<(f64, f64, f64, f64, f64)> = flips
        .par_iter()
        .map_init(
            || vec![ZERO; full_dim],
            |buf, &flip| {
                buf.iter_mut().for_each(|z| *z = ZERO);
                let target = flip.count_ones() / 2;
                let mut any = false;
                for &cfg in configs {
                    if (cfg.0 & flip).count_ones() != target {
                        continue;
                    }
                    let partner = cfg.0 ^ flip;
                    debug_assert_eq!(partner.count_ones(), half);
                    buf[cfg.0 as usize] = full[cfg.0 as usize].conj() * full[partner as usize];
                    any = true;
                }
                if !any {
                    return (0.0, 0.0, 0.0, 0.0, 0.0);
                }
                walsh_hadamard(buf);
                let mut second = CompensatedSum::default();
                let mut fourth = CompensatedSum::default();
                let mut residue = 0.0f64;
                for (z, g) in buf.iter().enumerate() {
                    // A = (-i)^{|flip ∧ z|} (-1)^{|z|} ĝ[z]; only |A| matters here
                    let ys = (flip & z as u32).count_ones();
                    let imag = if ys % 2 == 0 { g.im } else { g.re };
                    residue = residue.max(imag.abs());
                    let a2 = g.norm_sqr() - imag * imag;
                    second.add(a2);
                    fourth.add(a2 * a2);
                }
                (second.sum, second.comp, fourth.sum, fourth.comp, residue)
            },
        )
        .collect();

    let mut second = CompensatedSum::default();
    let mut fourth = CompensatedSum::default();
    let mut residue = 0.0f64;
    for (s, sc, f, fc, r) in per_flip {
        second.add(s);
        second.add(sc);
        fourth.add(f);
        fourth.add(fc);
        residue = residue.max(r);
    }
    if residue > IMAG_RESIDUE_TOL {
        return Err(Error::NumericalIntegrity(format!(
            "Pauli expectation has imaginary residue {residue:e}"
        )));
    }
    let norm = full_dim as f64;
    Ok(PauliMoments {
        second: second.value() / norm,
        fourth: fourth.value() / norm,
        max_imag_residue: residue,
    })
}

fn entropy_from_fourth_moment(fourth: f64) -> Result<f64> {
    let m2 = -fourth.ln();
    if m2 < -1e-12 || !m2.is_finite() {
        return Err(Error::NumericalIntegrity(format!(
            "stabilizer entropy evaluated to {m2:e}"
        )));
    }
    Ok(m2.max(0.0))
}

/// Stabilizer Rényi entropy `M₂` of a normalized sector state.
pub fn sre(psi: &StateVector) -> Result<f64> {
    entropy_from_fourth_moment(pauli_moments(psi)?.fourth)
}

/// `M₂` by visiting every string individually with [`pauli_expectation`].
/// Quadratically slower than [`sre`]; kept as a cross-check.
pub fn sre_direct(psi: &StateVector) -> Result<f64> {
    let l = psi.sites();
    if l > 10 {
        return Err(Error::Capacity(format!(
            "per-string enumeration supports L <= 10, got {l}"
        )));
    }
    let full = 1u32 << l;
    let mut fourth = CompensatedSum::default();
    for flip in (0..full).filter(|f| f.count_ones() % 2 == 0) {
        for yz in 0..full {
            let a = pauli_expectation(psi, &PauliString::new(l, flip, yz))?;
            fourth.add(a.powi(4));
        }
    }
    entropy_from_fourth_moment(fourth.value() / full as f64)
}

/// Applies `σ^α` on 0-based bit `site` of a full `2^L` vector using the
/// explicit 2×2 matrix.
fn apply_single_site(v: &[Complex64], site: usize, p: Pauli) -> Vec<Complex64> {
    let i = Complex64::new(0.0, 1.0);
    let one = Complex64::new(1.0, 0.0);
    // rows/cols ordered (down, up) = bit value (0, 1)
    let m: [[Complex64; 2]; 2] = match p {
        Pauli::I => [[one, ZERO], [ZERO, one]],
        Pauli::X => [[ZERO, one], [one, ZERO]],
        // ⟨↑|Y|↓⟩ = −i, ⟨↓|Y|↑⟩ = +i
        Pauli::Y => [[ZERO, i], [-i, ZERO]],
        Pauli::Z => [[-one, ZERO], [ZERO, one]],
    };
    let bit = 1usize << site;
    let mut out = vec![ZERO; v.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let row = (idx & bit != 0) as usize;
        let base = idx & !bit;
        *o = m[row][0] * v[base] + m[row][1] * v[base | bit];
    }
    out
}

fn dense_expectations(psi: &StateVector) -> Result<Vec<Complex64>> {
    let l = psi.sites();
    if l > DENSE_ORACLE_MAX_SITES {
        return Err(Error::Capacity(format!(
            "dense oracle supports L <= {DENSE_ORACLE_MAX_SITES}, got {l}"
        )));
    }
    let dim = 1usize << l;
    let mut full = vec![ZERO; dim];
    for (&cfg, &a) in psi.basis().configs().iter().zip(psi.amplitudes()) {
        full[cfg.0 as usize] = a;
    }
    let n_strings = 1usize << (2 * l);
    let mut values = Vec::with_capacity(n_strings);
    for code in 0..n_strings {
        let mut v = full.clone();
        for site in 0..l {
            let p = Pauli::from_code(((code >> (2 * site)) & 3) as u8).expect("2-bit code");
            v = apply_single_site(&v, site, p);
        }
        values.push(full.iter().zip(&v).map(|(a, b)| a.conj() * b).sum());
    }
    Ok(values)
}

/// Moments from explicit per-site matrix action in the full `2^L` space.
pub fn pauli_moments_dense(psi: &StateVector) -> Result<PauliMoments> {
    let values = dense_expectations(psi)?;
    let norm = (1usize << psi.sites()) as f64;
    let mut second = CompensatedSum::default();
    let mut fourth = CompensatedSum::default();
    let mut residue = 0.0f64;
    for a in values {
        residue = residue.max(a.im.abs());
        second.add(a.re * a.re);
        fourth.add(a.re.powi(4));
    }
    Ok(PauliMoments {
        second: second.value() / norm,
        fourth: fourth.value() / norm,
        max_imag_residue: residue,
    })
}

/// Reference `M₂` from the full `2^L` space. Limited to `L <= 8`.
pub fn sre_dense_oracle(psi: &StateVector) -> Result<f64> {
    entropy_from_fourth_moment(pauli_moments_dense(psi)?.fourth)
}

/// Dense-oracle expectation of a single string, for cross-checks.
pub fn pauli_expectation_dense(psi: &StateVector, p: &PauliString) -> Result<Complex64> {
    let l = psi.sites();
    if l > DENSE_ORACLE_MAX_SITES {
        return Err(Error::Capacity(format!(
            "dense oracle supports L <= {DENSE_ORACLE_MAX_SITES}, got {l}"
        )));
    }
    let mut full = vec![ZERO; 1 << l];
    for (&cfg, &a) in psi.basis().configs().iter().zip(psi.amplitudes()) {
        full[cfg.0 as usize] = a;
    }
    let mut v = full.clone();
    for site in 1..=l {
        v = apply_single_site(&v, site - 1, p.at(site));
    }
    Ok(full.iter().zip(&v).map(|(a, b)| a.conj() * b).sum())
}
