//! XXZ-staggered chain and complex SYK model restricted to the `S^z = 0` sector.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hilbert::{SpinConfig, StateVector, SubspaceBasis};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Site from which the staggering phase `(−1)^j` is counted.
///
/// With [`StaggerOrigin::One`] the field on site 1 is `−W/2 σ^z_1`, so the
/// Néel state `|↑,↓,…⟩` is the ground state of the field term. With
/// [`StaggerOrigin::Zero`] every sign flips and the Néel state sits at the
/// top of the field term instead.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StaggerOrigin {
    #[default]
    One,
    Zero,
}

/// Couplings of the XXZ chain in a staggered field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct XxzParams {
    /// Hopping amplitude.
    pub j: f64,
    /// Ising interaction.
    pub v: f64,
    /// Staggered field amplitude.
    pub w: f64,
    #[serde(default)]
    pub stagger: StaggerOrigin,
}

impl XxzParams {
    pub fn new(j: f64, v: f64, w: f64) -> Self {
        Self {
            j,
            v,
            w,
            stagger: StaggerOrigin::One,
        }
    }

    pub fn with_stagger(mut self, stagger: StaggerOrigin) -> Self {
        self.stagger = stagger;
        self
    }
}

impl Default for XxzParams {
    fn default() -> Self {
        Self::new(1.0, 1.0, 1.0)
    }
}

/// Which model an operator was built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelMeta {
    Xxz {
        j: f64,
        v: f64,
        w: f64,
        #[serde(default)]
        stagger: StaggerOrigin,
    },
    Syk {
        j: f64,
        seed: u64,
    },
}

/// Row-compressed sparse matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
}

impl CsrMatrix {
    fn from_dense(m: &DMatrix<Complex64>) -> Self {
        let mut row_ptr = Vec::with_capacity(m.nrows() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                if v != ZERO {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn matvec_into(&self, x: &[Complex64], y: &mut [Complex64]) {
        for (r, out) in y.iter_mut().enumerate() {
            *out = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }
}

/// Hermitian operator on the `S^z = 0` sector.
#[derive(Clone, Debug)]
pub struct HamiltonianOperator {
    basis: Arc<SubspaceBasis>,
    dense: DMatrix<Complex64>,
    sparse: Option<CsrMatrix>,
    meta: ModelMeta,
}

impl HamiltonianOperator {
    /// Wraps an arbitrary dense sector matrix. Used for tests and for the
    /// measurement-only limit (`H = 0`).
    pub fn from_dense(
        basis: Arc<SubspaceBasis>,
        dense: DMatrix<Complex64>,
        meta: ModelMeta,
    ) -> Result<Self> {
        let n = basis.dim();
        if dense.nrows() != n || dense.ncols() != n {
            return invalid(format!(
                "matrix is {}x{}, sector dimension is {n}",
                dense.nrows(),
                dense.ncols()
            ));
        }
        Ok(Self {
            basis,
            dense,
            sparse: None,
            meta,
        })
    }

    /// The zero operator on `basis`.
    pub fn zero(basis: Arc<SubspaceBasis>) -> Self {
        let n = basis.dim();
        Self {
            basis,
            dense: DMatrix::zeros(n, n),
            sparse: None,
            meta: ModelMeta::Xxz {
                j: 0.0,
                v: 0.0,
                w: 0.0,
                stagger: StaggerOrigin::One,
            },
        }
    }

    pub fn basis(&self) -> &Arc<SubspaceBasis> {
        &self.basis
    }

    pub fn dense(&self) -> &DMatrix<Complex64> {
        &self.dense
    }

    pub fn sparse(&self) -> Option<&CsrMatrix> {
        self.sparse.as_ref()
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Largest element of `|H − H†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for r in 0..n {
            for c in r..n {
                worst = worst.max((self.dense[(r, c)] - self.dense[(c, r)].conj()).norm());
            }
        }
        worst
    }

    /// `y = H x`, using the sparse form when available.
    pub fn matvec_into(&self, x: &[Complex64], y: &mut [Complex64]) {
        match &self.sparse {
            Some(csr) => csr.matvec_into(x, y),
            None => {
                let n = self.dim();
                for (r, out) in y.iter_mut().enumerate() {
                    let mut acc = ZERO;
                    for c in 0..n {
                        acc += self.dense[(r, c)] * x[c];
                    }
                    *out = acc;
                }
            }
        }
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![ZERO; x.len()];
        self.matvec_into(x, &mut y);
        y
    }

    /// `⟨ψ|H|ψ⟩`, real for Hermitian `H`.
    pub fn expectation(&self, psi: &StateVector) -> f64 {
        let h_psi = self.matvec(psi.amplitudes());
        psi.amplitudes()
            .iter()
            .zip(&h_psi)
            .map(|(a, b)| (a.conj() * b).re)
            .sum()
    }
}

/// Builds the XXZ chain in a staggered field with periodic boundaries:
/// `Σ_j [ J/2 (σ⁺_j σ⁻_{j+1} + h.c.) + V/4 σ^z_j σ^z_{j+1} + W/2 (−1)^j σ^z_j ]`.
pub fn build_xxz(basis: &Arc<SubspaceBasis>, params: XxzParams) -> Result<HamiltonianOperator> {
    let l = basis.sites();
    if l < 4 {
        return invalid(format!(
            "XXZ chain needs L >= 4 with periodic bonds, got {l}"
        ));
    }
    if !(params.j.is_finite() && params.v.is_finite() && params.w.is_finite()) {
        return invalid("XXZ couplings must be finite");
    }
    let n = basis.dim();
    let mut dense = DMatrix::from_element(n, n, ZERO);
    for (col, &cfg) in basis.configs().iter().enumerate() {
        let mut diag = 0.0;
        for site in 1..=l {
            let next = site % l + 1;
            let (s, s_next) = (cfg.sz(site), cfg.sz(next));
            diag += 0.25 * params.v * s * s_next;
            let counted = match params.stagger {
                StaggerOrigin::One => site,
                StaggerOrigin::Zero => site - 1,
            };
            let stagger = if counted % 2 == 0 { 1.0 } else { -1.0 };
            diag += 0.5 * params.w * stagger * s;
            if params.j != 0.0 && s != s_next {
                let swapped = SpinConfig(cfg.0 ^ (1 << (site - 1)) ^ (1 << (next - 1)));
                let row = basis.rank_unchecked(swapped);
                dense[(row, col)] += Complex64::new(0.5 * params.j, 0.0);
            }
        }
        dense[(col, col)] += Complex64::new(diag, 0.0);
    }
    let sparse = Some(CsrMatrix::from_dense(&dense));
    Ok(HamiltonianOperator {
        basis: basis.clone(),
        dense,
        sparse,
        meta: ModelMeta::Xxz {
            j: params.j,
            v: params.v,
            w: params.w,
            stagger: params.stagger,
        },
    })
}

/// One independently drawn SYK coupling, keyed by 1-based site labels with
/// `i < j`, `k < l` and `pair(i, j) >= pair(k, l)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingEntry {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub l: usize,
    pub re: f64,
    pub im: f64,
}

/// Canonical SYK couplings `J_{ij,kl}`; the remaining entries follow from
/// `J_{ij,kl} = −J_{ji,kl} = −J_{ij,lk} = J*_{kl,ij}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SykCouplings {
    pub sites: usize,
    pub scale: f64,
    pub seed: u64,
    pub entries: Vec<CouplingEntry>,
}

/// Lexicographic index of the pair `(i, j)`, `0 <= i < j < sites`.
fn pair_index(sites: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < sites);
    i * (2 * sites - i - 1) / 2 + (j - i - 1)
}

fn pairs(sites: usize) -> Vec<(usize, usize)> {
    (0..sites)
        .flat_map(|i| (i + 1..sites).map(move |j| (i, j)))
        .collect()
}

/// Draws the canonical couplings: off-diagonal pair entries have real and
/// imaginary parts `~ N(0, J²/2)`, diagonal-pair entries are real `~ N(0, J²)`.
pub fn sample_syk_couplings(sites: usize, scale: f64, seed: u64) -> Result<SykCouplings> {
    if sites < 4 || sites % 2 != 0 {
        return invalid(format!(
            "SYK needs an even number of sites >= 4, got {sites}"
        ));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return invalid(format!("SYK coupling scale must be positive, got {scale}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = pairs(sites);
    let half_sd = scale / std::f64::consts::SQRT_2;
    let mut entries = Vec::with_capacity(pairs.len() * (pairs.len() + 1) / 2);
    for (p1, &(i, j)) in pairs.iter().enumerate() {
        for &(k, l) in &pairs[..=p1] {
            let (re, im) = if pair_index(sites, k, l) == p1 {
                let x: f64 = StandardNormal.sample(&mut rng);
                (scale * x, 0.0)
            } else {
                let x: f64 = StandardNormal.sample(&mut rng);
                let y: f64 = StandardNormal.sample(&mut rng);
                (half_sd * x, half_sd * y)
            };
            entries.push(CouplingEntry {
                i: i + 1,
                j: j + 1,
                k: k + 1,
                l: l + 1,
                re,
                im,
            });
        }
    }
    Ok(SykCouplings {
        sites,
        scale,
        seed,
        entries,
    })
}

impl SykCouplings {
    /// Full `L⁴` tensor indexed `[((i·L + j)·L + k)·L + l]` with 0-based sites.
    pub fn full_tensor(&self) -> Result<Vec<Complex64>> {
        let n = self.sites;
        let np = n * (n - 1) / 2;
        let mut canon = vec![None; np * np];
        for e in &self.entries {
            let in_range = |a: usize, b: usize| a >= 1 && a < b && b <= n;
            if !in_range(e.i, e.j) || !in_range(e.k, e.l) {
                return invalid(format!("coupling entry {e:?} has invalid site labels"));
            }
            let p1 = pair_index(n, e.i - 1, e.j - 1);
            let p2 = pair_index(n, e.k - 1, e.l - 1);
            if p1 < p2 {
                return invalid(format!("coupling entry {e:?} is not canonical"));
            }
            if p1 == p2 && e.im != 0.0 {
                return invalid(format!("diagonal-pair coupling {e:?} must be real"));
            }
            canon[p1 * np + p2] = Some(Complex64::new(e.re, e.im));
        }
        let mut tensor = vec![ZERO; n * n * n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        if i == j || k == l {
                            continue;
                        }
                        let (a, b, s1) = if i < j { (i, j, 1.0) } else { (j, i, -1.0) };
                        let (c, d, s2) = if k < l { (k, l, 1.0) } else { (l, k, -1.0) };
                        let p1 = pair_index(n, a, b);
                        let p2 = pair_index(n, c, d);
                        let value = if p1 >= p2 {
                            canon[p1 * np + p2]
                        } else {
                            canon[p2 * np + p1].map(|z: Complex64| z.conj())
                        };
                        let value = value.ok_or_else(|| {
                            Error::InvalidArgument(format!(
                                "missing canonical coupling for pairs {p1}, {p2}"
                            ))
                        })?;
                        tensor[((i * n + j) * n + k) * n + l] = value * (s1 * s2);
                    }
                }
            }
        }
        Ok(tensor)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let couplings: Self = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("malformed coupling file: {e}")))?;
        couplings.full_tensor()?;
        Ok(couplings)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// Jordan-Wigner string sign `Π_{ℓ<site} s_ℓ` (0-based `site`).
#[inline]
fn string_sign(bits: u32, site: usize) -> f64 {
    let below = (1u32 << site) - 1;
    // number of down spins left of `site`
    let downs = site as u32 - (bits & below).count_ones();
    if downs % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Applies `𝒮^site σ^±_site` to a configuration, returning the new bits and
/// the sign, or `None` when the ladder operator annihilates it.
#[inline]
fn ladder(bits: u32, site: usize, raise: bool) -> Option<(u32, f64)> {
    let mask = 1u32 << site;
    let up = bits & mask != 0;
    if up == raise {
        return None;
    }
    let next = bits ^ mask;
    Some((next, string_sign(next, site)))
}

/// Builds `L^{−3/2} Σ J_{ij,kl} (𝒮^iσ⁺_i)(𝒮^jσ⁺_j)(𝒮^kσ⁻_k)(𝒮^lσ⁻_l)` on the sector.
pub fn build_syk(
    basis: &Arc<SubspaceBasis>,
    couplings: &SykCouplings,
) -> Result<HamiltonianOperator> {
    let n_sites = basis.sites();
    if couplings.sites != n_sites {
        return invalid(format!(
            "couplings are for L={}, basis has L={n_sites}",
            couplings.sites
        ));
    }
    let tensor = couplings.full_tensor()?;
    let prefactor = (n_sites as f64).powf(-1.5);
    let n = basis.dim();
    let mut dense = DMatrix::from_element(n, n, ZERO);
    for (col, &cfg) in basis.configs().iter().enumerate() {
        for l in 0..n_sites {
            let Some((b1, s1)) = ladder(cfg.0, l, false) else {
                continue;
            };
            for k in 0..n_sites {
                let Some((b2, s2)) = ladder(b1, k, false) else {
                    continue;
                };
                for j in 0..n_sites {
                    let Some((b3, s3)) = ladder(b2, j, true) else {
                        continue;
                    };
                    for i in 0..n_sites {
                        let Some((b4, s4)) = ladder(b3, i, true) else {
                            continue;
                        };
                        let coupling = tensor[((i * n_sites + j) * n_sites + k) * n_sites + l];
                        if coupling == ZERO {
                            continue;
                        }
                        let row = basis.rank_unchecked(SpinConfig(b4));
                        dense[(row, col)] += coupling * (prefactor * s1 * s2 * s3 * s4);
                    }
                }
            }
        }
    }
    Ok(HamiltonianOperator {
        basis: basis.clone(),
        dense,
        sparse: None,
        meta: ModelMeta::Syk {
            j: couplings.scale,
            seed: couplings.seed,
        },
    })
}
