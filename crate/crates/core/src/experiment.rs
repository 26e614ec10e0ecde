//! Batch pipelines behind the command-line runner: unitary runs, monitored
//! sweeps, random-state baselines, Lindblad consistency checks and fits of
//! existing sweep tables.
//!
//! Every random stream is derived from `master_seed` and the task's identity
//! (size, disorder group, `γ` index, trajectory index), and parallel results
//! are collected in task order, so outputs do not depend on the worker count.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    fit_generalized_lorentzian, fit_linear, mean_and_stderr, steady_average, steady_average_series,
    DataPoint, FitResult, LinearFit, SteadyAverage,
};
use crate::error::{invalid, Error, Result};
use crate::evolution::{make_propagator, Propagator, PropagatorMode};
use crate::hamiltonian::{
    build_syk, build_xxz, sample_syk_couplings, HamiltonianOperator, ModelMeta, StaggerOrigin,
    XxzParams,
};
use crate::hilbert::{StateVector, SubspaceBasis};
use crate::magic::{sre, SRE_MAX_SITES};
use crate::monitoring::{
    lindblad_evolve, run_trajectory_with_step, DensityMatrix, MonitoringParams, TrajectoryRecord,
    LINDBLAD_MAX_SITES,
};
use crate::output::{fmt_float, write_json, CsvTable};
use crate::randomstates::{random_state, RandomStateKind};
use crate::seeding::{child_seed, labelled_seed, rng_from_seed};

/// `|z|` threshold of the Lindblad consistency check.
pub const LINDBLAD_Z_THRESHOLD: f64 = 4.0;
/// Below this many trajectories the Lindblad check is flagged as low power.
pub const LOW_POWER_TRAJECTORIES: usize = 100;
/// Largest `|Δ|` accepted where the trajectory spread vanishes.
pub const DETERMINISTIC_TOL: f64 = 1e-8;
/// RK4 steps of the Lindblad reference per trajectory step.
pub const LINDBLAD_SUBSTEPS: usize = 10;

pub const SWEEP_HEADER: [&str; 9] = [
    "gamma",
    "L",
    "mean_sre",
    "stderr",
    "n_traj",
    "t0",
    "t1",
    "stationary",
    "error",
];
pub const FIT_HEADER: [&str; 9] = [
    "L",
    "A",
    "A_err",
    "gamma0",
    "gamma0_err",
    "b",
    "b_err",
    "residual_rms",
    "converged",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    /// XXZ-staggered chain with `V = 0`.
    Xx,
    Xxz,
    Syk,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Xx => "xx",
            Model::Xxz => "xxz",
            Model::Syk => "syk",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xx" => Ok(Model::Xx),
            "xxz" => Ok(Model::Xxz),
            "syk" => Ok(Model::Syk),
            other => invalid(format!("unknown model '{other}' (expected xx, xxz or syk)")),
        }
    }
}

/// `n` points log-spaced in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|k| {
                let f = k as f64 / (n - 1) as f64;
                (lo.ln() + f * (hi.ln() - lo.ln())).exp()
            })
            .collect(),
    }
}

/// Twelve log-spaced rates in `[10⁻², 10¹]`.
pub fn default_gamma_grid() -> Vec<f64> {
    log_grid(1e-2, 1e1, 12)
}

/// Full description of a batch run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: Model,
    /// Chain lengths `L`.
    pub sites: Vec<usize>,
    pub j: f64,
    /// Ignored (forced to zero) for `model = xx`.
    pub v: f64,
    pub w: f64,
    pub stagger: StaggerOrigin,
    pub gammas: Vec<f64>,
    pub dt: f64,
    pub t_max: f64,
    pub burn_in: f64,
    pub sre_stride: usize,
    /// Trajectories per `(γ, L)` point.
    pub n_traj: usize,
    /// SYK disorder realizations (unitary runs) or trajectory groups (sweeps).
    pub n_disorder: usize,
    /// Samples per size for the random-state baselines.
    pub n_random: usize,
    pub master_seed: u64,
    pub propagator: PropagatorMode,
    pub krylov_dim: Option<usize>,
    pub krylov_tol: Option<f64>,
    /// Record `⟨σ^z_l⟩` in saved trajectories.
    pub record_sz: bool,
    /// Write every trajectory as CSV plus JSON sidecar.
    pub save_trajectories: bool,
    /// Fit the generalized Lorentzian per `L` after a sweep.
    pub fit: bool,
    /// Nothing is written when unset.
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: Model::Xxz,
            sites: vec![6, 8, 10],
            j: 1.0,
            v: 1.0,
            w: 1.0,
            stagger: StaggerOrigin::Zero,
            gammas: default_gamma_grid(),
            dt: 0.01,
            t_max: 40.0,
            burn_in: 10.0,
            sre_stride: 10,
            n_traj: 48,
            n_disorder: 11,
            n_random: 100,
            master_seed: 1,
            propagator: PropagatorMode::Auto,
            krylov_dim: None,
            krylov_tol: None,
            record_sz: false,
            save_trajectories: false,
            fit: true,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// Checks every field and returns the effective configuration
    /// (`V = 0` for the XX model).
    pub fn validated(&self) -> Result<Self> {
        let mut cfg = self.clone();
        if cfg.model == Model::Xx {
            cfg.v = 0.0;
        }
        if cfg.sites.is_empty() {
            return invalid("at least one chain length is required");
        }
        for &l in &cfg.sites {
            if l < 4 || l % 2 != 0 || l > SRE_MAX_SITES {
                return invalid(format!(
                    "chain length must be even and in [4, {SRE_MAX_SITES}], got {l}"
                ));
            }
        }
        for (name, x) in [("j", cfg.j), ("v", cfg.v), ("w", cfg.w)] {
            if !x.is_finite() {
                return invalid(format!("{name} must be finite"));
            }
        }
        if cfg.model == Model::Syk && !(cfg.j > 0.0) {
            return invalid("SYK coupling scale j must be positive");
        }
        for &g in &cfg.gammas {
            if !(g >= 0.0 && g.is_finite()) {
                return invalid(format!("gamma values must be finite and >= 0, got {g}"));
            }
        }
        cfg.monitoring(0.0).validate()?;
        if cfg.n_traj == 0 || cfg.n_disorder == 0 || cfg.n_random == 0 {
            return invalid("n_traj, n_disorder and n_random must be at least 1");
        }
        Ok(cfg)
    }

    pub fn monitoring(&self, gamma: f64) -> MonitoringParams {
        MonitoringParams {
            gamma,
            dt: self.dt,
            t_max: self.t_max,
            sre_stride: self.sre_stride,
            burn_in: self.burn_in,
            record_sre: true,
            record_sz: self.record_sz,
        }
    }

    /// Disorder realizations (SYK) or 1.
    pub fn realizations(&self) -> usize {
        match self.model {
            Model::Syk => self.n_disorder,
            _ => 1,
        }
    }

    fn out(&self, name: &str) -> Option<PathBuf> {
        self.output_dir.as_ref().map(|d| d.join(name))
    }
}

fn task_key(sites: usize, index: usize) -> u64 {
    ((sites as u64) << 32) | index as u64
}

/// Seed of SYK disorder realization `group` at size `sites`.
pub fn disorder_seed(master: u64, sites: usize, group: usize) -> u64 {
    labelled_seed(master, "syk-disorder", task_key(sites, group))
}

/// Master seed of the trajectories at `(L, γ index)`; trajectory `k` uses
/// `child_seed(point_seed, k)`.
pub fn point_seed(master: u64, sites: usize, gamma_index: usize) -> u64 {
    labelled_seed(master, "trajectories", task_key(sites, gamma_index))
}

/// Seed of random-state sample `k` at size `sites`.
pub fn random_state_seed(master: u64, kind: RandomStateKind, sites: usize, k: usize) -> u64 {
    let label = match kind {
        RandomStateKind::Phase => "random-phase",
        RandomStateKind::Haar => "random-haar",
    };
    labelled_seed(master, label, task_key(sites, k))
}

/// Hamiltonian of `cfg.model` at size `basis.sites()`; `group` selects the
/// SYK disorder realization.
pub fn build_model(
    cfg: &ExperimentConfig,
    basis: &Arc<SubspaceBasis>,
    group: usize,
) -> Result<HamiltonianOperator> {
    match cfg.model {
        Model::Xx | Model::Xxz => {
            let v = if cfg.model == Model::Xx { 0.0 } else { cfg.v };
            build_xxz(
                basis,
                XxzParams::new(cfg.j, v, cfg.w).with_stagger(cfg.stagger),
            )
        }
        Model::Syk => {
            let couplings = sample_syk_couplings(
                basis.sites(),
                cfg.j,
                disorder_seed(cfg.master_seed, basis.sites(), group),
            )?;
            build_syk(basis, &couplings)
        }
    }
}

fn build_propagator(
    cfg: &ExperimentConfig,
    basis: &Arc<SubspaceBasis>,
    group: usize,
) -> Result<Propagator> {
    let h = build_model(cfg, basis, group)?;
    make_propagator(Arc::new(h), cfg.propagator, cfg.krylov_dim, cfg.krylov_tol)
}

/// One seed recorded in a manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub role: String,
    pub sites: usize,
    pub index: usize,
    pub seed: u64,
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedEntry>,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
}

impl Manifest {
    fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            tool: "qsd-magic".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: cfg.clone(),
            seeds: Vec::new(),
            outputs: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn seed(&mut self, role: &str, sites: usize, index: usize, seed: u64) {
        self.seeds.push(SeedEntry {
            role: role.into(),
            sites,
            index,
            seed,
        });
    }
}

/// Writes `table` under the output directory, if any, and records it.
fn emit(
    cfg: &ExperimentConfig,
    manifest: &mut Manifest,
    name: &str,
    table: &CsvTable,
) -> Result<()> {
    if let Some(path) = cfg.out(name) {
        table.write(&path)?;
        manifest.outputs.push(name.to_string());
    }
    Ok(())
}

fn finish_manifest(cfg: &ExperimentConfig, mut manifest: Manifest, name: &str) -> Result<Manifest> {
    if let Some(path) = cfg.out(name) {
        manifest.outputs.push(name.to_string());
        write_json(&path, &manifest)?;
    }
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// Random-state baselines

/// Mean SRE of random sector states at one size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    pub kind: RandomStateKind,
    pub sites: usize,
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
    /// `ln N_L`.
    pub ln_dim: f64,
}

/// Averages `M₂` over `n_samples` random states of `kind`.
pub fn random_baseline(
    kind: RandomStateKind,
    sites: usize,
    n_samples: usize,
    master_seed: u64,
) -> Result<RandomBaseline> {
    if n_samples == 0 {
        return invalid("random baseline needs at least one sample");
    }
    let basis = SubspaceBasis::shared(sites)?;
    let values: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_from_seed(random_state_seed(master_seed, kind, sites, k));
            sre(&random_state(kind, &basis, &mut rng))
        })
        .collect::<Result<_>>()?;
    let (mean, stderr) = mean_and_stderr(&values);
    Ok(RandomBaseline {
        kind,
        sites,
        mean,
        stderr,
        n_samples,
        ln_dim: (basis.dim() as f64).ln(),
    })
}

/// Random-state baselines for every configured size and both kinds.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomStateReport {
    pub baselines: Vec<RandomBaseline>,
    /// Straight-line fit of the mean against `L`, per kind (needs ≥ 3 sizes).
    pub slopes: Vec<(RandomStateKind, LinearFit)>,
    pub manifest: Manifest,
}

pub fn run_random_states(config: &ExperimentConfig) -> Result<RandomStateReport> {
    let cfg = config.validated()?;
    let mut manifest = Manifest::new("random-state", &cfg);
    let mut baselines = Vec::new();
    for kind in [RandomStateKind::Phase, RandomStateKind::Haar] {
        for &l in &cfg.sites {
            baselines.push(random_baseline(kind, l, cfg.n_random, cfg.master_seed)?);
            for k in 0..cfg.n_random {
                manifest.seed(
                    kind_name(kind),
                    l,
                    k,
                    random_state_seed(cfg.master_seed, kind, l, k),
                );
            }
        }
    }
    let mut slopes = Vec::new();
    for kind in [RandomStateKind::Phase, RandomStateKind::Haar] {
        let pts: Vec<DataPoint> = baselines
            .iter()
            .filter(|b| b.kind == kind)
            .map(|b| DataPoint::new(b.sites as f64, b.mean, b.stderr))
            .collect();
        if pts.len() >= 3 {
            slopes.push((kind, fit_linear(&pts)?));
        }
    }

    let mut table = CsvTable::new(["kind", "L", "mean_sre", "stderr", "n_samples", "ln_dim"]);
    for b in &baselines {
        table.push(vec![
            kind_name(b.kind).into(),
            b.sites.to_string(),
            fmt_float(b.mean),
            fmt_float(b.stderr),
            b.n_samples.to_string(),
            fmt_float(b.ln_dim),
        ]);
    }
    emit(&cfg, &mut manifest, "random_states.csv", &table)?;
    let mut slope_table =
        CsvTable::new(["kind", "slope", "slope_err", "intercept", "intercept_err"]);
    for (kind, fit) in &slopes {
        slope_table.push(vec![
            kind_name(*kind).into(),
            fmt_float(fit.slope),
            fmt_float(fit.slope_stderr),
            fmt_float(fit.intercept),
            fmt_float(fit.intercept_stderr),
        ]);
    }
    emit(&cfg, &mut manifest, "random_slopes.csv", &slope_table)?;
    let manifest = finish_manifest(&cfg, manifest, "random_states_manifest.json")?;
    Ok(RandomStateReport {
        baselines,
        slopes,
        manifest,
    })
}

fn kind_name(kind: RandomStateKind) -> &'static str {
    match kind {
        RandomStateKind::Phase => "phase",
        RandomStateKind::Haar => "haar",
    }
}

// ---------------------------------------------------------------------------
// Unitary runs

/// Realization-averaged `M₂(t)` at one size.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitarySeries {
    pub sites: usize,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    /// RMS deviation over realizations (zero for a single one).
    pub rms: Vec<f64>,
}

/// Time-averaged unitary SRE at one size with random-state references.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitarySummary {
    pub sites: usize,
    /// Mean over realizations of the time average over `[burn_in, t_max]`.
    pub time_avg: f64,
    /// RMS deviation over realizations divided by `√n`.
    pub stderr: f64,
    pub n_realizations: usize,
    /// Per-realization time averages.
    pub realization_avgs: Vec<f64>,
    pub phase: RandomBaseline,
    pub haar: RandomBaseline,
    pub ln_dim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitaryReport {
    pub series: Vec<UnitarySeries>,
    pub summary: Vec<UnitarySummary>,
    pub manifest: Manifest,
}

/// Unitary evolution from the Néel state for every configured size (`γ`
/// ignored), with time averages over `[burn_in, t_max]`.
pub fn run_unitary(config: &ExperimentConfig) -> Result<UnitaryReport> {
    let cfg = config.validated()?;
    let mut manifest = Manifest::new("unitary", &cfg);
    let params = cfg.monitoring(0.0);
    let mut series = Vec::new();
    let mut summary = Vec::new();
    for &l in &cfg.sites {
        let basis = SubspaceBasis::shared(l)?;
        let groups = cfg.realizations();
        if cfg.model == Model::Syk {
            for g in 0..groups {
                manifest.seed("syk-disorder", l, g, disorder_seed(cfg.master_seed, l, g));
            }
        }
        let records: Vec<TrajectoryRecord> = (0..groups)
            .into_par_iter()
            .map(|g| {
                let prop = build_propagator(&cfg, &basis, g)?;
                let step = prop.fixed_step(cfg.dt);
                run_trajectory_with_step(&basis, &step, &params, 0)
            })
            .collect::<Result<_>>()?;
        let times = records[0].times.clone();
        let n = records.len() as f64;
        let mut mean = Vec::with_capacity(times.len());
        let mut rms = Vec::with_capacity(times.len());
        for i in 0..times.len() {
            let m = records.iter().map(|r| r.sre[i]).sum::<f64>() / n;
            let var = records.iter().map(|r| (r.sre[i] - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            rms.push(var.sqrt());
        }
        let realization_avgs: Vec<f64> = records
            .iter()
            .map(|r| {
                steady_average_series(
                    [(r.times.as_slice(), r.sre.as_slice())],
                    cfg.burn_in,
                    cfg.t_max,
                )
                .map(|a| a.mean)
            })
            .collect::<Result<_>>()?;
        let (time_avg, stderr) = mean_and_stderr(&realization_avgs);
        summary.push(UnitarySummary {
            sites: l,
            time_avg,
            stderr,
            n_realizations: records.len(),
            realization_avgs,
            phase: random_baseline(RandomStateKind::Phase, l, cfg.n_random, cfg.master_seed)?,
            haar: random_baseline(RandomStateKind::Haar, l, cfg.n_random, cfg.master_seed)?,
            ln_dim: (basis.dim() as f64).ln(),
        });
        series.push(UnitarySeries {
            sites: l,
            times,
            mean,
            rms,
        });
    }

    let model = cfg.model.name();
    for s in &series {
        let mut table = CsvTable::new(["t", "sre", "sre_rms"]);
        for i in 0..s.times.len() {
            table.push(vec![
                fmt_float(s.times[i]),
                fmt_float(s.mean[i]),
                fmt_float(s.rms[i]),
            ]);
        }
        emit(
            &cfg,
            &mut manifest,
            &format!("unitary_{model}_L{}.csv", s.sites),
            &table,
        )?;
    }
    let mut table = CsvTable::new([
        "L",
        "time_avg_sre",
        "stderr",
        "n_realizations",
        "phase_mean",
        "phase_stderr",
        "haar_mean",
        "haar_stderr",
        "ln_dim",
    ]);
    for s in &summary {
        table.push(vec![
            s.sites.to_string(),
            fmt_float(s.time_avg),
            fmt_float(s.stderr),
            s.n_realizations.to_string(),
            fmt_float(s.phase.mean),
            fmt_float(s.phase.stderr),
            fmt_float(s.haar.mean),
            fmt_float(s.haar.stderr),
            fmt_float(s.ln_dim),
        ]);
    }
    emit(
        &cfg,
        &mut manifest,
        &format!("unitary_{model}_summary.csv"),
        &table,
    )?;
    let manifest = finish_manifest(&cfg, manifest, &format!("unitary_{model}_manifest.json"))?;
    Ok(UnitaryReport {
        series,
        summary,
        manifest,
    })
}

// ---------------------------------------------------------------------------
// Monitored sweeps

/// One `(γ, L)` point of a sweep. Failed points carry `error` and NaN means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub sites: usize,
    pub mean_sre: f64,
    pub stderr: f64,
    pub n_traj: usize,
    pub t0: f64,
    pub t1: f64,
    pub stationary: Option<bool>,
    pub error: Option<String>,
}

impl SweepRow {
    fn ok(gamma: f64, sites: usize, avg: &SteadyAverage) -> Self {
        Self {
            gamma,
            sites,
            mean_sre: avg.mean,
            stderr: avg.stderr,
            n_traj: avg.n_traj,
            t0: avg.window.0,
            t1: avg.window.1,
            stationary: avg.stationary,
            error: None,
        }
    }

    fn failed(gamma: f64, sites: usize, cfg: &ExperimentConfig, err: &Error) -> Self {
        Self {
            gamma,
            sites,
            mean_sre: f64::NAN,
            stderr: f64::NAN,
            n_traj: 0,
            t0: cfg.burn_in,
            t1: cfg.t_max,
            stationary: None,
            error: Some(err.to_string()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    fn csv_row(&self) -> Vec<String> {
        vec![
            fmt_float(self.gamma),
            self.sites.to_string(),
            fmt_float(self.mean_sre),
            fmt_float(self.stderr),
            self.n_traj.to_string(),
            fmt_float(self.t0),
            fmt_float(self.t1),
            match self.stationary {
                Some(true) => "true".into(),
                Some(false) => "false".into(),
                None => String::new(),
            },
            self.error.clone().unwrap_or_default(),
        ]
    }
}

/// Slope of the steady SRE against `L` at one `γ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub gamma: f64,
    pub fit: LinearFit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Generalized-Lorentzian fit per `L` (when enabled and ≥ 4 points).
    pub fits: Vec<(usize, FitResult)>,
    /// Linear fit in `L` per `γ` (when ≥ 3 sizes succeeded).
    pub slopes: Vec<SlopeRow>,
    pub manifest: Manifest,
}

impl SweepReport {
    pub fn row(&self, gamma_index: usize, sites: usize) -> Option<&SweepRow> {
        let gammas = self.manifest.config.gammas.len();
        let li = self
            .manifest
            .config
            .sites
            .iter()
            .position(|&l| l == sites)?;
        self.rows.get(li * gammas + gamma_index)
    }

    pub fn fit(&self, sites: usize) -> Option<&FitResult> {
        self.fits.iter().find(|(l, _)| *l == sites).map(|(_, f)| f)
    }
}

/// Groups the trajectories of one point are split into (SYK disorder).
fn trajectory_groups(cfg: &ExperimentConfig) -> usize {
    cfg.realizations().min(cfg.n_traj)
}

/// Steady-state SRE over `cfg.gammas × cfg.sites`, rows ordered by `L`
/// then `γ`. Per-point failures are recorded and the sweep continues.
pub fn run_monitored_sweep(config: &ExperimentConfig) -> Result<SweepReport> {
    let cfg = config.validated()?;
    if cfg.gammas.is_empty() {
        return invalid("gamma list is empty");
    }
    let mut manifest = Manifest::new("sweep", &cfg);
    let model = cfg.model.name();
    let groups = trajectory_groups(&cfg);
    let mut rows = Vec::new();
    for &l in &cfg.sites {
        if cfg.model == Model::Syk {
            for g in 0..groups {
                manifest.seed("syk-disorder", l, g, disorder_seed(cfg.master_seed, l, g));
            }
        }
        for gi in 0..cfg.gammas.len() {
            manifest.seed("trajectories", l, gi, point_seed(cfg.master_seed, l, gi));
        }
        let basis = SubspaceBasis::shared(l)?;
        let props: Result<Vec<Propagator>> = (0..groups)
            .into_par_iter()
            .map(|g| build_propagator(&cfg, &basis, g))
            .collect();
        let props = match props {
            Ok(p) => p,
            Err(err) => {
                for &gamma in &cfg.gammas {
                    rows.push(SweepRow::failed(gamma, l, &cfg, &err));
                }
                continue;
            }
        };
        let steps: Vec<_> = props.iter().map(|p| p.fixed_step(cfg.dt)).collect();
        let params: Vec<MonitoringParams> = cfg.gammas.iter().map(|&g| cfg.monitoring(g)).collect();
        let tasks: Vec<(usize, usize)> = (0..cfg.gammas.len())
            .flat_map(|gi| (0..cfg.n_traj).map(move |k| (gi, k)))
            .collect();
        let results: Vec<Result<TrajectoryRecord>> = tasks
            .par_iter()
            .map(|&(gi, k)| {
                let seed = child_seed(point_seed(cfg.master_seed, l, gi), k as u64);
                run_trajectory_with_step(&basis, &steps[k % groups], &params[gi], seed)
            })
            .collect();
        let mut results = results.into_iter();
        for (gi, &gamma) in cfg.gammas.iter().enumerate() {
            let point: Result<Vec<TrajectoryRecord>> = results.by_ref().take(cfg.n_traj).collect();
            let row = match point.and_then(|recs| {
                if cfg.save_trajectories {
                    save_point_trajectories(&cfg, &mut manifest, l, gi, groups, &recs)?;
                }
                steady_average(&recs, cfg.burn_in, cfg.t_max)
            }) {
                Ok(avg) => {
                    if let Some(w) = avg.warning() {
                        manifest
                            .warnings
                            .push(format!("L = {l}, gamma = {gamma}: {w}"));
                    }
                    SweepRow::ok(gamma, l, &avg)
                }
                Err(err) => {
                    manifest
                        .warnings
                        .push(format!("L = {l}, gamma = {gamma}: {err}"));
                    SweepRow::failed(gamma, l, &cfg, &err)
                }
            };
            rows.push(row);
        }
    }

    let mut fits = Vec::new();
    if cfg.fit {
        for &l in &cfg.sites {
            let pts: Vec<DataPoint> = rows
                .iter()
                .filter(|r| r.sites == l && r.is_ok())
                .map(|r| DataPoint::new(r.gamma, r.mean_sre, r.stderr))
                .collect();
            match fit_points(&pts) {
                Ok(fit) => fits.push((l, fit)),
                Err(err) => manifest
                    .warnings
                    .push(format!("fit at L = {l} skipped: {err}")),
            }
        }
    }
    let mut slopes = Vec::new();
    for &gamma in &cfg.gammas {
        let pts: Vec<DataPoint> = rows
            .iter()
            .filter(|r| r.gamma == gamma && r.is_ok())
            .map(|r| DataPoint::new(r.sites as f64, r.mean_sre, r.stderr))
            .collect();
        if pts.len() >= 3 {
            match fit_linear(&pts) {
                Ok(fit) => slopes.push(SlopeRow { gamma, fit }),
                Err(err) => manifest
                    .warnings
                    .push(format!("slope at gamma = {gamma} skipped: {err}")),
            }
        }
    }

    emit(
        &cfg,
        &mut manifest,
        &format!("sweep_{model}.csv"),
        &sweep_table(&rows),
    )?;
    if cfg.fit {
        emit(
            &cfg,
            &mut manifest,
            &format!("fits_{model}.csv"),
            &fit_table(&fits),
        )?;
    }
    let mut slope_table =
        CsvTable::new(["gamma", "slope", "slope_err", "intercept", "intercept_err"]);
    for s in &slopes {
        slope_table.push(vec![
            fmt_float(s.gamma),
            fmt_float(s.fit.slope),
            fmt_float(s.fit.slope_stderr),
            fmt_float(s.fit.intercept),
            fmt_float(s.fit.intercept_stderr),
        ]);
    }
    emit(
        &cfg,
        &mut manifest,
        &format!("slopes_{model}.csv"),
        &slope_table,
    )?;
    let manifest = finish_manifest(&cfg, manifest, &format!("sweep_{model}_manifest.json"))?;
    Ok(SweepReport {
        rows,
        fits,
        slopes,
        manifest,
    })
}

fn fit_points(points: &[DataPoint]) -> Result<FitResult> {
    if points.len() < 4 {
        return invalid(format!(
            "need at least 4 successful points, got {}",
            points.len()
        ));
    }
    fit_generalized_lorentzian(points)
}

pub fn sweep_table(rows: &[SweepRow]) -> CsvTable {
    let mut table = CsvTable::new(SWEEP_HEADER);
    for r in rows {
        table.push(r.csv_row());
    }
    table
}

pub fn fit_table(fits: &[(usize, FitResult)]) -> CsvTable {
    let mut table = CsvTable::new(FIT_HEADER);
    for (l, f) in fits {
        table.push(vec![
            l.to_string(),
            fmt_float(f.amplitude),
            fmt_float(f.amplitude_err()),
            fmt_float(f.gamma0),
            fmt_float(f.gamma0_err()),
            fmt_float(f.exponent),
            fmt_float(f.exponent_err()),
            fmt_float(f.residual_rms),
            f.converged.to_string(),
        ]);
    }
    table
}

/// Fits every `L` of a sweep table written by [`run_monitored_sweep`].
/// Returns the successful fits and one message per skipped size.
pub fn fit_sweep_table(table: &CsvTable) -> Result<(Vec<(usize, FitResult)>, Vec<String>)> {
    let col = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| Error::InvalidArgument(format!("sweep table lacks column '{name}'")))
    };
    let (cg, cl, cm, cs) = (col("gamma")?, col("L")?, col("mean_sre")?, col("stderr")?);
    let ce = table.column("error");
    let parse = |s: &str, what: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::InvalidArgument(format!("cannot parse {what} '{s}'")))
    };
    let mut by_size: Vec<(usize, Vec<DataPoint>)> = Vec::new();
    for row in &table.rows {
        if ce.is_some_and(|c| !row[c].trim().is_empty()) {
            continue;
        }
        let l = row[cl]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::InvalidArgument(format!("cannot parse L '{}'", row[cl])))?;
        let p = DataPoint::new(
            parse(&row[cg], "gamma")?,
            parse(&row[cm], "mean_sre")?,
            parse(&row[cs], "stderr")?,
        );
        match by_size.iter_mut().find(|(s, _)| *s == l) {
            Some((_, pts)) => pts.push(p),
            None => by_size.push((l, vec![p])),
        }
    }
    let mut fits = Vec::new();
    let mut skipped = Vec::new();
    for (l, pts) in by_size {
        match fit_points(&pts) {
            Ok(f) => fits.push((l, f)),
            Err(err) => skipped.push(format!("L = {l}: {err}")),
        }
    }
    Ok((fits, skipped))
}

/// Reads a sweep CSV and writes the per-`L` fits to `output`.
pub fn fit_sweep_file(
    input: &Path,
    output: &Path,
) -> Result<(Vec<(usize, FitResult)>, Vec<String>)> {
    let table = CsvTable::read(input)?;
    let (fits, skipped) = fit_sweep_table(&table)?;
    fit_table(&fits).write(output)?;
    Ok((fits, skipped))
}

fn save_point_trajectories(
    cfg: &ExperimentConfig,
    manifest: &mut Manifest,
    sites: usize,
    gamma_index: usize,
    groups: usize,
    records: &[TrajectoryRecord],
) -> Result<()> {
    let Some(dir) = cfg.output_dir.as_ref() else {
        return Ok(());
    };
    let params = cfg.monitoring(cfg.gammas[gamma_index]);
    for (k, rec) in records.iter().enumerate() {
        let stem = format!(
            "trajectories/{}_L{sites}_g{gamma_index}_k{k}",
            cfg.model.name()
        );
        let group = k % groups;
        let basis = SubspaceBasis::shared(sites)?;
        let meta = build_model(cfg, &basis, group)?.meta().clone();
        write_trajectory(rec, &dir.join(format!("{stem}.csv")), &params, &meta, group)?;
        manifest.outputs.push(format!("{stem}.csv"));
        manifest.outputs.push(format!("{stem}.json"));
    }
    Ok(())
}

/// JSON sidecar of a saved trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySidecar {
    pub seed: u64,
    pub params: MonitoringParams,
    pub model: ModelMeta,
    pub disorder_group: usize,
    pub norm_drift: f64,
}

/// Writes `record` as CSV (`t, sre[, sz_1..sz_L]`) with a `.json` sidecar
/// next to it.
pub fn write_trajectory(
    record: &TrajectoryRecord,
    csv_path: &Path,
    params: &MonitoringParams,
    model: &ModelMeta,
    disorder_group: usize,
) -> Result<()> {
    let sites = record.sz.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    if !record.sre.is_empty() {
        header.push("sre".into());
    }
    header.extend((1..=sites).map(|l| format!("sz_{l}")));
    let mut table = CsvTable::new(header);
    for (i, &t) in record.times.iter().enumerate() {
        let mut row = vec![fmt_float(t)];
        if let Some(&m) = record.sre.get(i) {
            row.push(fmt_float(m));
        }
        if let Some(sz) = record.sz.get(i) {
            row.extend(sz.iter().map(|&x| fmt_float(x)));
        }
        table.push(row);
    }
    table.write(csv_path)?;
    let sidecar = TrajectorySidecar {
        seed: record.seed,
        params: params.clone(),
        model: model.clone(),
        disorder_group,
        norm_drift: record.norm_drift,
    };
    write_json(&csv_path.with_extension("json"), &sidecar)
}

// ---------------------------------------------------------------------------
// Lindblad consistency

/// Trajectory average of `⟨σ^z_site⟩` against the Lindblad value at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LindbladRow {
    pub gamma: f64,
    pub sites: usize,
    pub t: f64,
    /// 1-based site.
    pub site: usize,
    pub traj_mean: f64,
    /// Sample standard deviation over trajectories divided by `√N_r`.
    pub stderr: f64,
    pub lindblad: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LindbladReport {
    pub rows: Vec<LindbladRow>,
    pub max_abs_z: f64,
    pub max_abs_diff: f64,
    pub n_traj: usize,
    pub pass: bool,
    pub low_power: bool,
}

/// z-score of `mean` against `reference`. Differences below
/// [`DETERMINISTIC_TOL`] count as agreement, which matters when the
/// trajectories coincide and the spread is zero up to rounding.
fn z_score(mean: f64, reference: f64, stderr: f64) -> f64 {
    let diff = mean - reference;
    if diff.abs() <= DETERMINISTIC_TOL {
        0.0
    } else if stderr > 0.0 {
        diff / stderr
    } else {
        f64::INFINITY.copysign(diff)
    }
}

/// Compares trajectory-averaged `⟨σ^z_l(t)⟩` with RK4 integration of the
/// Lindblad equation (step `dt / LINDBLAD_SUBSTEPS`) at every sampled time, for each configured
/// `(γ, L)` with `L ≤ 6`. Passes iff `max |z| ≤ 4`.
pub fn run_lindblad_check(config: &ExperimentConfig) -> Result<LindbladReport> {
    let cfg = config.validated()?;
    if cfg.gammas.is_empty() {
        return invalid("gamma list is empty");
    }
    if let Some(&l) = cfg.sites.iter().find(|&&l| l > LINDBLAD_MAX_SITES) {
        return invalid(format!(
            "Lindblad check is limited to L <= {LINDBLAD_MAX_SITES}, got {l}"
        ));
    }
    let mut manifest = Manifest::new("lindblad-check", &cfg);
    let mut rows = Vec::new();
    for &l in &cfg.sites {
        let basis = SubspaceBasis::shared(l)?;
        if cfg.model == Model::Syk {
            manifest.seed("syk-disorder", l, 0, disorder_seed(cfg.master_seed, l, 0));
        }
        let prop = build_propagator(&cfg, &basis, 0)?;
        let step = prop.fixed_step(cfg.dt);
        let rho0 = DensityMatrix::pure(&StateVector::neel(basis.clone()));
        for (gi, &gamma) in cfg.gammas.iter().enumerate() {
            let seed = point_seed(cfg.master_seed, l, gi);
            manifest.seed("trajectories", l, gi, seed);
            let params = MonitoringParams {
                record_sre: false,
                record_sz: true,
                ..cfg.monitoring(gamma)
            };
            let records: Vec<TrajectoryRecord> = (0..cfg.n_traj)
                .into_par_iter()
                .map(|k| {
                    run_trajectory_with_step(&basis, &step, &params, child_seed(seed, k as u64))
                })
                .collect::<Result<_>>()?;
            let lind = lindblad_evolve(
                &rho0,
                prop.hamiltonian(),
                gamma,
                cfg.t_max,
                cfg.dt / LINDBLAD_SUBSTEPS as f64,
            )?;
            let n = records.len() as f64;
            for (i, &t) in records[0].times.iter().enumerate() {
                let reference = lind[i * cfg.sre_stride * LINDBLAD_SUBSTEPS]
                    .rho
                    .sigma_z_expectations();
                for site in 0..l {
                    let mean = records.iter().map(|r| r.sz[i][site]).sum::<f64>() / n;
                    let stderr = if records.len() > 1 {
                        let var = records
                            .iter()
                            .map(|r| (r.sz[i][site] - mean).powi(2))
                            .sum::<f64>()
                            / (n - 1.0);
                        (var / n).sqrt()
                    } else {
                        0.0
                    };
                    rows.push(LindbladRow {
                        gamma,
                        sites: l,
                        t,
                        site: site + 1,
                        traj_mean: mean,
                        stderr,
                        lindblad: reference[site],
                        z: z_score(mean, reference[site], stderr),
                    });
                }
            }
        }
    }
    let max_abs_z = rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max);
    let max_abs_diff = rows
        .iter()
        .map(|r| (r.traj_mean - r.lindblad).abs())
        .fold(0.0, f64::max);
    let report = LindbladReport {
        rows,
        max_abs_z,
        max_abs_diff,
        n_traj: cfg.n_traj,
        pass: max_abs_z <= LINDBLAD_Z_THRESHOLD,
        low_power: cfg.n_traj < LOW_POWER_TRAJECTORIES,
    };
    if report.low_power {
        manifest.warnings.push(format!(
            "low statistical power: {} trajectories (< {LOW_POWER_TRAJECTORIES})",
            cfg.n_traj
        ));
    }

    let model = cfg.model.name();
    let mut table = CsvTable::new([
        "gamma",
        "L",
        "t",
        "site",
        "traj_mean",
        "stderr",
        "lindblad",
        "z",
    ]);
    for r in &report.rows {
        table.push(vec![
            fmt_float(r.gamma),
            r.sites.to_string(),
            fmt_float(r.t),
            r.site.to_string(),
            fmt_float(r.traj_mean),
            fmt_float(r.stderr),
            fmt_float(r.lindblad),
            fmt_float(r.z),
        ]);
    }
    emit(
        &cfg,
        &mut manifest,
        &format!("lindblad_{model}.csv"),
        &table,
    )?;
    if let Some(path) = cfg.out(&format!("lindblad_{model}_report.json")) {
        #[derive(Serialize)]
        struct Summary<'a> {
            pass: bool,
            max_abs_z: f64,
            max_abs_diff: f64,
            threshold: f64,
            n_traj: usize,
            low_power: bool,
            manifest: &'a Manifest,
        }
        manifest
            .outputs
            .push(format!("lindblad_{model}_report.json"));
        write_json(
            &path,
            &Summary {
                pass: report.pass,
                max_abs_z: report.max_abs_z,
                max_abs_diff: report.max_abs_diff,
                threshold: LINDBLAD_Z_THRESHOLD,
                n_traj: report.n_traj,
                low_power: report.low_power,
                manifest: &manifest,
            },
        )?;
    }
    Ok(report)
}
