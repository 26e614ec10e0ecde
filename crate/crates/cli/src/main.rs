use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qsd_magic::evolution::PropagatorMode;
use qsd_magic::experiment::{
    fit_sweep_file, run_lindblad_check, run_monitored_sweep, run_random_states, run_unitary,
    ExperimentConfig, Model,
};
use qsd_magic::hamiltonian::StaggerOrigin;

/// Stabilizer Rényi entropy along unitary and monitored spin-chain dynamics.
#[derive(Debug, Parser)]
#[command(name = "qsd-magic", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Unitary evolution from the Néel state; time series and time averages vs L.
    Unitary(Overrides),
    /// Steady-state SRE of monitored trajectories over the gamma grid.
    Sweep(Overrides),
    /// Random-phase and Haar baselines of the SRE vs L.
    RandomState(Overrides),
    /// Generalized-Lorentzian fits of an existing sweep table.
    Fit(FitArgs),
    /// Trajectory-averaged <sigma^z> against the Lindblad equation (L <= 6).
    LindbladCheck(Overrides),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Xx,
    Xxz,
    Syk,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PropagatorArg {
    Eig,
    Krylov,
    Auto,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StaggerArg {
    One,
    Zero,
}

/// Settings read from `--config`, overridden by any flag given.
#[derive(Debug, Args)]
struct Overrides {
    /// TOML file with experiment settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Chain lengths, comma separated.
    #[arg(long, value_delimiter = ',')]
    sites: Option<Vec<usize>>,
    #[arg(long)]
    j: Option<f64>,
    #[arg(long)]
    v: Option<f64>,
    #[arg(long)]
    w: Option<f64>,
    /// Sign convention of the staggered field.
    #[arg(long, value_enum)]
    stagger: Option<StaggerArg>,
    /// Measurement rates, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    gammas: Option<Vec<f64>>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    burn_in: Option<f64>,
    #[arg(long)]
    sre_stride: Option<usize>,
    #[arg(long)]
    n_traj: Option<usize>,
    #[arg(long)]
    n_disorder: Option<usize>,
    #[arg(long)]
    n_random: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    propagator: Option<PropagatorArg>,
    #[arg(long)]
    krylov_dim: Option<usize>,
    #[arg(long)]
    krylov_tol: Option<f64>,
    #[arg(long)]
    record_sz: bool,
    #[arg(long)]
    save_trajectories: bool,
    /// Skip the per-L Lorentzian fits after a sweep.
    #[arg(long)]
    no_fit: bool,
    #[arg(long, short = 'o')]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Sweep CSV written by `sweep`.
    #[arg(long, short = 'i')]
    input: PathBuf,
    /// Destination of the fit table.
    #[arg(long, short = 'o')]
    output: PathBuf,
}

impl Overrides {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(m) = self.model {
            cfg.model = match m {
                ModelArg::Xx => Model::Xx,
                ModelArg::Xxz => Model::Xxz,
                ModelArg::Syk => Model::Syk,
            };
        }
        if let Some(s) = &self.sites {
            cfg.sites = s.clone();
        }
        if let Some(g) = &self.gammas {
            cfg.gammas = g.clone();
        }
        if let Some(s) = self.stagger {
            cfg.stagger = match s {
                StaggerArg::One => StaggerOrigin::One,
                StaggerArg::Zero => StaggerOrigin::Zero,
            };
        }
        if let Some(p) = self.propagator {
            cfg.propagator = match p {
                PropagatorArg::Eig => PropagatorMode::Eig,
                PropagatorArg::Krylov => PropagatorMode::Krylov,
                PropagatorArg::Auto => PropagatorMode::Auto,
            };
        }
        macro_rules! set {
            ($($field:ident <- $flag:ident),*) => {
                $(if let Some(x) = self.$flag { cfg.$field = x; })*
            };
        }
        set!(j <- j, v <- v, w <- w, dt <- dt, t_max <- t_max, burn_in <- burn_in,
             sre_stride <- sre_stride, n_traj <- n_traj, n_disorder <- n_disorder,
             n_random <- n_random, master_seed <- seed);
        if self.krylov_dim.is_some() {
            cfg.krylov_dim = self.krylov_dim;
        }
        if self.krylov_tol.is_some() {
            cfg.krylov_tol = self.krylov_tol;
        }
        cfg.record_sz |= self.record_sz;
        cfg.save_trajectories |= self.save_trajectories;
        if self.no_fit {
            cfg.fit = false;
        }
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = Some(dir.clone());
        }
        if cfg.output_dir.is_none() {
            cfg.output_dir = Some(PathBuf::from("out"));
        }
        Ok(cfg)
    }
}

fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

#[derive(Serialize)]
struct ErrorSummary {
    status: &'static str,
    kind: &'static str,
    message: String,
    causes: Vec<String>,
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    use qsd_magic::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::InvalidArgument(_)) => "invalid_argument",
        Some(E::Capacity(_)) => "capacity",
        Some(E::NumericalIntegrity(_)) => "numerical_integrity",
        Some(E::IntegrationFailure(_)) => "integration_failure",
        Some(E::Internal(_)) => "internal",
        Some(E::Io { .. }) => "io",
        Some(E::Csv { .. }) => "csv",
        Some(E::Json { .. }) => "json",
        None if err.downcast_ref::<toml::de::Error>().is_some() => "config",
        None if err.downcast_ref::<std::io::Error>().is_some() => "io",
        None => "other",
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("serializable summary")
    );
}

/// Returns the process exit code for a completed command.
fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Unitary(o) => {
            let report = run_unitary(&o.resolve()?)?;
            #[derive(Serialize)]
            struct Row {
                sites: usize,
                time_avg: f64,
                stderr: f64,
                phase_mean: f64,
                ln_dim: f64,
            }
            let rows: Vec<Row> = report
                .summary
                .iter()
                .map(|s| Row {
                    sites: s.sites,
                    time_avg: s.time_avg,
                    stderr: s.stderr,
                    phase_mean: s.phase.mean,
                    ln_dim: s.ln_dim,
                })
                .collect();
            print_json(&serde_json::json!({
                "status": "ok",
                "summary": rows,
                "outputs": report.manifest.outputs,
                "warnings": report.manifest.warnings,
            }));
            Ok(0)
        }
        Command::Sweep(o) => {
            let report = run_monitored_sweep(&o.resolve()?)?;
            let failed = report.rows.iter().filter(|r| !r.is_ok()).count();
            print_json(&serde_json::json!({
                "status": if failed == 0 { "ok" } else { "partial" },
                "points": report.rows.len(),
                "failed_points": failed,
                "fits": report.fits.iter().map(|(l, f)| serde_json::json!({
                    "L": l, "A": f.amplitude, "gamma0": f.gamma0, "b": f.exponent,
                    "residual_rms": f.residual_rms, "converged": f.converged,
                })).collect::<Vec<_>>(),
                "outputs": report.manifest.outputs,
                "warnings": report.manifest.warnings,
            }));
            Ok(0)
        }
        Command::RandomState(o) => {
            let report = run_random_states(&o.resolve()?)?;
            print_json(&serde_json::json!({
                "status": "ok",
                "baselines": report.baselines,
                "outputs": report.manifest.outputs,
            }));
            Ok(0)
        }
        Command::Fit(args) => {
            let (fits, skipped) = fit_sweep_file(&args.input, &args.output)?;
            print_json(&serde_json::json!({
                "status": "ok",
                "fitted_sizes": fits.iter().map(|(l, _)| *l).collect::<Vec<_>>(),
                "skipped": skipped,
                "output": args.output,
            }));
            Ok(0)
        }
        Command::LindbladCheck(o) => {
            let report = run_lindblad_check(&o.resolve()?)?;
            print_json(&serde_json::json!({
                "status": if report.pass { "pass" } else { "fail" },
                "max_abs_z": report.max_abs_z,
                "max_abs_diff": report.max_abs_diff,
                "n_traj": report.n_traj,
                "low_power": report.low_power,
            }));
            Ok(if report.pass { 0 } else { 3 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            let summary = ErrorSummary {
                status: "error",
                kind: error_kind(&err),
                message: err.to_string(),
                causes: err.chain().skip(1).map(|c| c.to_string()).collect(),
            };
            eprintln!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("serializable error")
            );
            ExitCode::from(1)
        }
    }
}
