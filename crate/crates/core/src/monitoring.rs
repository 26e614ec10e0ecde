//! Quantum-state-diffusion trajectories under continuous `σ^z_l` monitoring,
//! and the dephasing Lindblad equation they unravel.
//!
//! One step of length `δt` maps
//! `ψ ↦ 𝒩 exp(Σ_l σ^z_l [δξ_l + 2γδt⟨σ^z_l⟩]) e^{−iHδt} ψ`, with
//! `δξ_l ~ N(0, γδt)` and `⟨σ^z_l⟩` taken on the state before the step.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::evolution::{Propagator, UnitaryStep};
use crate::hamiltonian::HamiltonianOperator;
use crate::hilbert::{StateVector, SubspaceBasis};
use crate::linalg::hermitian_eigenvalues;
use crate::magic::sre;
use crate::seeding::{child_seed, rng_from_seed};

/// Measurement strength, time grid and sampling cadence of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitoringParams {
    pub gamma: f64,
    pub dt: f64,
    pub t_max: f64,
    /// Steps between two recorded samples.
    pub sre_stride: usize,
    /// Start of the steady-state averaging window.
    pub burn_in: f64,
    /// Evaluate `M₂` at each sample.
    #[serde(default = "default_true")]
    pub record_sre: bool,
    /// Record `⟨σ^z_l⟩` at each sample.
    #[serde(default)]
    pub record_sz: bool,
}

fn default_true() -> bool {
    true
}

impl Default for MonitoringParams {
    fn default() -> Self {
        Self {
            gamma: 0.0,
            dt: 0.01,
            t_max: 30.0,
            sre_stride: 10,
            burn_in: 10.0,
            record_sre: true,
            record_sz: false,
        }
    }
}

impl MonitoringParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return invalid(format!("gamma must be finite and >= 0, got {}", self.gamma));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return invalid(format!("t_max must be positive, got {}", self.t_max));
        }
        if !(self.burn_in >= 0.0 && self.burn_in < self.t_max) {
            return invalid(format!(
                "burn-in {} must lie in [0, t_max = {})",
                self.burn_in, self.t_max
            ));
        }
        if self.sre_stride == 0 {
            return invalid("sre_stride must be at least 1");
        }
        Ok(())
    }

    /// Number of integration steps covering `[0, t_max]`.
    pub fn n_steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }
}

/// Gaussian increments `δξ_l` for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSample {
    pub xi: Vec<f64>,
}

impl NoiseSample {
    /// Draws `L` independent `N(0, γδt)` increments.
    pub fn draw<R: Rng + ?Sized>(sites: usize, gamma: f64, dt: f64, rng: &mut R) -> Self {
        if gamma == 0.0 {
            return Self::zero(sites);
        }
        let normal = Normal::new(0.0, (gamma * dt).sqrt()).expect("finite variance");
        Self {
            xi: (0..sites).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn zero(sites: usize) -> Self {
        Self {
            xi: vec![0.0; sites],
        }
    }
}

/// `⟨ψ|σ^z_l|ψ⟩` for `l = 1..L`.
pub fn sigma_z_expectations(psi: &StateVector) -> Vec<f64> {
    let l = psi.sites();
    let mut out = vec![0.0; l];
    for (&cfg, a) in psi.basis().configs().iter().zip(psi.amplitudes()) {
        let p = a.norm_sqr();
        for (site, o) in out.iter_mut().enumerate() {
            if (cfg.0 >> site) & 1 == 1 {
                *o += p;
            } else {
                *o -= p;
            }
        }
    }
    out
}

/// Multiplies amplitudes by `exp(Σ_l s_l field_l)` and renormalizes.
fn apply_measurement_weights(psi: &mut StateVector, field: &[f64]) -> Result<()> {
    let configs = psi.basis().configs().to_vec();
    let exponents: Vec<f64> = configs
        .iter()
        .map(|cfg| {
            field
                .iter()
                .enumerate()
                .map(|(site, f)| if (cfg.0 >> site) & 1 == 1 { *f } else { -*f })
                .sum()
        })
        .collect();
    // shift by the largest exponent; the common factor drops out on normalization
    let shift = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (a, e) in psi.amplitudes_mut().iter_mut().zip(&exponents) {
        *a *= (e - shift).exp();
    }
    let norm = psi.renormalize();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Internal(format!(
            "measurement update produced a state of norm {norm}"
        )));
    }
    Ok(())
}

/// Advances one step; returns the new state and `‖e^{−iHδt}ψ‖`.
fn advance(
    psi: &StateVector,
    step: &UnitaryStep<'_>,
    gamma: f64,
    dt: f64,
    noise: &NoiseSample,
) -> Result<(StateVector, f64)> {
    if noise.xi.len() != psi.sites() {
        return invalid(format!(
            "noise has {} entries for {} sites",
            noise.xi.len(),
            psi.sites()
        ));
    }
    let sz = sigma_z_expectations(psi);
    let mut next = step.apply(psi);
    let unitary_norm = next.norm();
    if gamma == 0.0 && noise.xi.iter().all(|&x| x == 0.0) {
        next.renormalize();
        return Ok((next, unitary_norm));
    }
    let field: Vec<f64> = noise
        .xi
        .iter()
        .zip(&sz)
        .map(|(xi, s)| xi + 2.0 * gamma * dt * s)
        .collect();
    apply_measurement_weights(&mut next, &field)?;
    Ok((next, unitary_norm))
}

/// One Trotterized QSD step.
pub fn qsd_step(
    psi: &StateVector,
    prop: &Propagator,
    params: &MonitoringParams,
    noise: &NoiseSample,
) -> Result<StateVector> {
    let step = prop.fixed_step(params.dt);
    advance(psi, &step, params.gamma, params.dt, noise).map(|(next, _)| next)
}

/// Samples recorded along one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub times: Vec<f64>,
    /// `M₂` at each sample (empty when SRE recording is off).
    pub sre: Vec<f64>,
    /// `⟨σ^z_l⟩` per sample (empty when off).
    pub sz: Vec<Vec<f64>>,
    /// Largest `|‖e^{−iHδt}ψ‖ − 1|` observed.
    pub norm_drift: f64,
}

/// Evolves the Néel state from `t = 0` to `t_max`, sampling every
/// `sre_stride` steps including `t = 0`. Deterministic in `seed`.
pub fn run_trajectory(
    prop: &Propagator,
    params: &MonitoringParams,
    seed: u64,
) -> Result<TrajectoryRecord> {
    let step = prop.fixed_step(params.dt);
    run_trajectory_with_step(prop.hamiltonian().basis(), &step, params, seed)
}

/// [`run_trajectory`] with a precomputed unitary step, so callers running many
/// trajectories on one Hamiltonian pay for `e^{−iHδt}` once.
pub fn run_trajectory_with_step(
    basis: &Arc<SubspaceBasis>,
    step: &UnitaryStep<'_>,
    params: &MonitoringParams,
    seed: u64,
) -> Result<TrajectoryRecord> {
    params.validate()?;
    let sites = basis.sites();
    let mut rng = rng_from_seed(seed);
    let mut psi = StateVector::neel(basis.clone());
    let n_steps = params.n_steps();
    let n_samples = n_steps / params.sre_stride + 1;
    let mut record = TrajectoryRecord {
        seed,
        times: Vec::with_capacity(n_samples),
        sre: Vec::with_capacity(if params.record_sre { n_samples } else { 0 }),
        sz: Vec::new(),
        norm_drift: 0.0,
    };
    let sample = |record: &mut TrajectoryRecord, psi: &StateVector, t: f64| -> Result<()> {
        record.times.push(t);
        if params.record_sre {
            record.sre.push(sre(psi)?);
        }
        if params.record_sz {
            record.sz.push(sigma_z_expectations(psi));
        }
        Ok(())
    };
    sample(&mut record, &psi, 0.0)?;
    for n in 1..=n_steps {
        let noise = NoiseSample::draw(sites, params.gamma, params.dt, &mut rng);
        let (next, unitary_norm) = advance(&psi, step, params.gamma, params.dt, &noise)?;
        record.norm_drift = record.norm_drift.max((unitary_norm - 1.0).abs());
        psi = next;
        if n % params.sre_stride == 0 {
            sample(&mut record, &psi, n as f64 * params.dt)?;
        }
    }
    Ok(record)
}

/// Runs `n_traj` trajectories in parallel. Trajectory `k` uses seed
/// `child_seed(master_seed, k)`; output is ordered by `k`.
pub fn run_ensemble(
    prop: &Propagator,
    params: &MonitoringParams,
    master_seed: u64,
    n_traj: usize,
) -> Result<Vec<TrajectoryRecord>> {
    params.validate()?;
    let step = prop.fixed_step(params.dt);
    let basis = prop.hamiltonian().basis();
    (0..n_traj)
        .into_par_iter()
        .map(|k| run_trajectory_with_step(basis, &step, params, child_seed(master_seed, k as u64)))
        .collect()
}

/// Density matrix on the sector.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    basis: Arc<SubspaceBasis>,
    rho: DMatrix<Complex64>,
}

impl DensityMatrix {
    pub fn pure(psi: &StateVector) -> Self {
        let n = psi.amplitudes().len();
        let a = psi.amplitudes();
        Self {
            basis: psi.basis().clone(),
            rho: DMatrix::from_fn(n, n, |r, c| a[r] * a[c].conj()),
        }
    }

    pub fn from_matrix(basis: Arc<SubspaceBasis>, rho: DMatrix<Complex64>) -> Result<Self> {
        if rho.nrows() != basis.dim() || rho.ncols() != basis.dim() {
            return invalid("density matrix does not match the sector dimension");
        }
        Ok(Self { basis, rho })
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.rho
    }

    pub fn basis(&self) -> &Arc<SubspaceBasis> {
        &self.basis
    }

    pub fn trace(&self) -> Complex64 {
        self.rho.trace()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        (&self.rho - self.rho.adjoint()).camax()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.rho + self.rho.adjoint()) * Complex64::new(0.5, 0.0);
        hermitian_eigenvalues(&herm).map_or(f64::NAN, |e| e[0])
    }

    /// `Tr(ρ σ^z_l)` for `l = 1..L`.
    pub fn sigma_z_expectations(&self) -> Vec<f64> {
        let l = self.basis.sites();
        let mut out = vec![0.0; l];
        for (i, &cfg) in self.basis.configs().iter().enumerate() {
            let p = self.rho[(i, i)].re;
            for (site, o) in out.iter_mut().enumerate() {
                *o += if (cfg.0 >> site) & 1 == 1 { p } else { -p };
            }
        }
        out
    }
}

/// A density matrix at time `t`.
#[derive(Clone, Debug)]
pub struct LindbladSample {
    pub t: f64,
    pub rho: DensityMatrix,
}

/// Largest chain accepted by [`lindblad_evolve`].
pub const LINDBLAD_MAX_SITES: usize = 6;

/// Integrates `∂ρ = −i[H, ρ] + γ Σ_j (σ^z_j ρ σ^z_j − ρ)` with classical RK4,
/// returning `ρ` at `t = 0` and after every step.
///
/// In the computational basis the dissipator is `−2γ d(a, b) ρ_ab`, with
/// `d` the number of sites on which configurations `a` and `b` differ.
pub fn lindblad_evolve(
    rho0: &DensityMatrix,
    hamiltonian: &HamiltonianOperator,
    gamma: f64,
    t_max: f64,
    dt_rk: f64,
) -> Result<Vec<LindbladSample>> {
    let basis = rho0.basis.clone();
    if basis.sites() > LINDBLAD_MAX_SITES {
        return invalid(format!(
            "Lindblad reference is limited to L <= {LINDBLAD_MAX_SITES}, got {}",
            basis.sites()
        ));
    }
    if hamiltonian.dim() != basis.dim() {
        return invalid("Hamiltonian and density matrix live on different sectors");
    }
    if !(dt_rk > 0.0 && t_max >= 0.0 && gamma >= 0.0) {
        return invalid("need dt_rk > 0, t_max >= 0, gamma >= 0");
    }
    let n = basis.dim();
    let configs = basis.configs();
    let decay = DMatrix::from_fn(n, n, |r, c| {
        Complex64::new(
            -2.0 * gamma * (configs[r].0 ^ configs[c].0).count_ones() as f64,
            0.0,
        )
    });
    let h = hamiltonian.dense();
    let minus_i = Complex64::new(0.0, -1.0);
    let rhs = |rho: &DMatrix<Complex64>| -> DMatrix<Complex64> {
        let comm = h * rho - rho * h;
        comm * minus_i + decay.component_mul(rho)
    };

    let n_steps = (t_max / dt_rk).round() as usize;
    let mut out = Vec::with_capacity(n_steps + 1);
    let mut rho = rho0.rho.clone();
    out.push(LindbladSample {
        t: 0.0,
        rho: rho0.clone(),
    });
    let half = Complex64::new(0.5 * dt_rk, 0.0);
    let full = Complex64::new(dt_rk, 0.0);
    let sixth = Complex64::new(dt_rk / 6.0, 0.0);
    let two = Complex64::new(2.0, 0.0);
    for step in 1..=n_steps {
        let k1 = rhs(&rho);
        let k2 = rhs(&(&rho + &k1 * half));
        let k3 = rhs(&(&rho + &k2 * half));
        let k4 = rhs(&(&rho + &k3 * full));
        rho += (k1 + k2 * two + k3 * two + k4) * sixth;
        let trace_drift = (rho.trace() - Complex64::new(1.0, 0.0)).norm();
        // |ρ_ab|² <= ρ_aa ρ_bb <= 1 for any state; larger entries signal blow-up
        let largest = rho.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if trace_drift > 1e-6 || !(largest <= 1.0 + 1e-6) {
            return Err(Error::IntegrationFailure(format!(
                "unstable at t = {} (trace drift {trace_drift:e}, largest entry {largest:e}); \
                 reduce dt_rk (currently {dt_rk})",
                step as f64 * dt_rk
            )));
        }
        out.push(LindbladSample {
            t: step as f64 * dt_rk,
            rho: DensityMatrix {
                basis: basis.clone(),
                rho: rho.clone(),
            },
        });
    }
    Ok(out)
}
