//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Aggregate CSVs go to `target/acceptance`. The process exits 0 after
//! reporting; pass `--strict` to exit 1 when any criterion fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use qsd_magic::analysis::{fit_generalized_lorentzian, generalized_lorentzian, DataPoint};
use qsd_magic::experiment::{
    default_gamma_grid, run_lindblad_check, run_monitored_sweep, run_random_states, run_unitary,
    ExperimentConfig, Model, SweepReport, UnitaryReport,
};
use qsd_magic::hilbert::SpinConfig;
use qsd_magic::magic::{pauli_moments, sre, sre_dense_oracle};
use qsd_magic::output::CsvTable;
use qsd_magic::randomstates::{haar_state, random_phase_state, RandomStateKind};
use qsd_magic::seeding::rng_from_seed;
use qsd_magic::{StateVector, SubspaceBasis};
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

struct Suite {
    out: PathBuf,
    outcomes: Vec<Outcome>,
}

impl Suite {
    /// Runs `check`; it fails when it returns false or exceeds `budget`.
    fn run(
        &mut self,
        name: &'static str,
        budget: Duration,
        check: impl FnOnce(&Path) -> (bool, String),
    ) {
        let start = Instant::now();
        let (ok, mut detail) = check(&self.out);
        let elapsed = start.elapsed();
        if elapsed > budget {
            detail.push_str(&format!("; over time budget {budget:?}"));
        }
        let outcome = Outcome {
            name,
            pass: ok && elapsed <= budget,
            detail,
            elapsed,
        };
        println!(
            "{} {:<28} {} [{:.1}s]",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.name,
            outcome.detail,
            outcome.elapsed.as_secs_f64()
        );
        self.outcomes.push(outcome);
    }
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn shared(l: usize) -> std::sync::Arc<SubspaceBasis> {
    SubspaceBasis::shared(l).unwrap()
}

fn config(out: &Path, sub: &str) -> ExperimentConfig {
    ExperimentConfig {
        output_dir: Some(out.join(sub)),
        ..Default::default()
    }
}

fn stabilizer_zero(_: &Path) -> (bool, String) {
    let worst = (4..=12)
        .step_by(2)
        .map(|l| sre(&StateVector::neel(shared(l))).unwrap().abs())
        .fold(0.0, f64::max);
    (
        worst <= 1e-12,
        format!("max |M2(Neel)| over L=4..12 = {worst:.2e}"),
    )
}

fn closed_form(_: &Path) -> (bool, String) {
    let basis = shared(2);
    let a = basis.rank(SpinConfig(0b01)).unwrap();
    let b = basis.rank(SpinConfig(0b10)).unwrap();
    let mut worst: f64 = 0.0;
    let mut at_quarter = 0.0;
    for theta in [
        0.0,
        std::f64::consts::PI / 8.0,
        std::f64::consts::FRAC_PI_4,
        std::f64::consts::FRAC_PI_2,
    ] {
        let mut amps = vec![Complex64::new(0.0, 0.0); 2];
        amps[a] = Complex64::new(1.0, 0.0);
        amps[b] = Complex64::from_polar(1.0, theta);
        let m = sre(&StateVector::from_amplitudes(basis.clone(), amps).unwrap()).unwrap();
        let want = -((2.0 + 2.0 * theta.cos().powi(4) + 2.0 * theta.sin().powi(4)) / 4.0).ln();
        worst = worst.max((m - want).abs());
        if theta == std::f64::consts::FRAC_PI_4 {
            at_quarter = m;
        }
    }
    let ln43 = (4.0f64 / 3.0).ln();
    let ok = worst <= 1e-12 && (at_quarter - ln43).abs() <= 1e-12;
    (
        ok,
        format!("max deviation {worst:.2e}; theta=pi/4 gives {at_quarter:.6} (ln 4/3 = {ln43:.6})"),
    )
}

fn oracle_equivalence(_: &Path) -> (bool, String) {
    let mut worst: f64 = 0.0;
    for l in [4, 6, 8] {
        let basis = shared(l);
        let mut rng = rng_from_seed(1000 + l as u64);
        for k in 0..50 {
            let psi = if k % 2 == 0 {
                random_phase_state(&basis, &mut rng)
            } else {
                haar_state(&basis, &mut rng)
            };
            worst = worst.max((sre(&psi).unwrap() - sre_dense_oracle(&psi).unwrap()).abs());
        }
    }
    (
        worst < 1e-10,
        format!("max |sre - dense oracle| over 150 states = {worst:.2e}"),
    )
}

fn purity_identity(_: &Path) -> (bool, String) {
    let mut rng = rng_from_seed(2000);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let l = [4, 6, 8, 10][k % 4];
        let psi = haar_state(&shared(l), &mut rng);
        worst = worst.max((pauli_moments(&psi).unwrap().second - 1.0).abs());
    }
    (
        worst <= 1e-8,
        format!("max |(1/2^L) sum A_P^2 - 1| over 20 states = {worst:.2e}"),
    )
}

fn unraveling(out: &Path) -> (bool, String) {
    let cfg = ExperimentConfig {
        sites: vec![4],
        gammas: vec![0.5],
        dt: 0.01,
        t_max: 5.0,
        burn_in: 0.0,
        n_traj: 2000,
        ..config(out, "unraveling")
    };
    let report = run_lindblad_check(&cfg).unwrap();
    (
        report.pass,
        format!(
            "max |z| = {:.2} over {} (t, site) pairs, N_r = {}",
            report.max_abs_z,
            report.rows.len(),
            report.n_traj
        ),
    )
}

fn unitary_config(out: &Path, model: Model) -> ExperimentConfig {
    ExperimentConfig {
        model,
        sites: vec![6, 8, 10],
        t_max: 50.0,
        burn_in: 10.0,
        n_disorder: 11,
        n_random: 200,
        ..config(out, "unitary")
    }
}

fn chaotic_saturation(syk: &UnitaryReport) -> (bool, String) {
    let at = |l| syk.summary.iter().find(|s| s.sites == l).unwrap();
    let (s6, s10) = (at(6), at(10));
    let combined = (s10.stderr.powi(2) + s10.phase.stderr.powi(2)).sqrt();
    let gap = s10.time_avg - s10.phase.mean;
    let (r6, r10) = (s6.time_avg / s6.ln_dim, s10.time_avg / s10.ln_dim);
    let matches = gap.abs() <= 2.0 * combined;
    let monotone = r10 > r6;
    (
        matches && monotone,
        format!(
            "L=10: SYK {:.4}+-{:.4} vs random-phase {:.4}+-{:.4} ({:+.1} combined stderr, {} realizations); \
             M2/lnN: L=6 {r6:.4}, L=10 {r10:.4}",
            s10.time_avg,
            s10.stderr,
            s10.phase.mean,
            s10.phase.stderr,
            gap / combined,
            s10.n_realizations
        ),
    )
}

fn ordering(xx: &UnitaryReport, xxz: &UnitaryReport, syk: &UnitaryReport) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for l in [6, 8, 10] {
        let get = |r: &UnitaryReport| {
            r.summary
                .iter()
                .find(|s| s.sites == l)
                .map(|s| (s.time_avg, s.stderr))
                .unwrap()
        };
        let (a, b, c) = (get(xx), get(xxz), get(syk));
        let below =
            |lo: (f64, f64), hi: (f64, f64)| hi.0 - lo.0 > (lo.1.powi(2) + hi.1.powi(2)).sqrt();
        ok &= below(a, b) && below(b, c);
        parts.push(format!("L={l}: {:.3} < {:.3} < {:.3}", a.0, b.0, c.0));
    }
    (ok, parts.join("; "))
}

fn ln2_slopes(out: &Path, xxz_sweep: &SweepReport) -> (bool, String) {
    let cfg = ExperimentConfig {
        sites: vec![6, 8, 10, 12],
        n_random: 200,
        ..config(out, "random")
    };
    let report = run_random_states(&cfg).unwrap();
    let phase = &report
        .slopes
        .iter()
        .find(|(k, _)| *k == RandomStateKind::Phase)
        .unwrap()
        .1;
    let ln2 = std::f64::consts::LN_2;
    let phase_ok = (phase.slope / ln2 - 1.0).abs() <= 0.10;
    let smallest = xxz_sweep
        .slopes
        .iter()
        .min_by(|a, b| a.gamma.total_cmp(&b.gamma))
        .unwrap();
    let monitored_ok = (smallest.fit.slope / ln2 - 1.0).abs() <= 0.15;
    (
        phase_ok && monitored_ok,
        format!(
            "random-phase slope {:.4} ({:+.1}% vs ln 2, limit 10%); monitored XXZ slope at gamma={:.3} {:.4} ({:+.1}%, limit 15%)",
            phase.slope,
            100.0 * (phase.slope / ln2 - 1.0),
            smallest.gamma,
            smallest.fit.slope,
            100.0 * (smallest.fit.slope / ln2 - 1.0)
        ),
    )
}

fn sweep_config(out: &Path, model: Model, sites: Vec<usize>) -> ExperimentConfig {
    ExperimentConfig {
        model,
        sites,
        gammas: default_gamma_grid(),
        t_max: 40.0,
        burn_in: 10.0,
        n_traj: 48,
        master_seed: 1,
        ..config(out, "sweep")
    }
}

fn fit_quality(
    xx: &SweepReport,
    xxz: &SweepReport,
    syk: &SweepReport,
    phase_l8: (f64, f64),
) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, report) in [("xx", xx), ("xxz", xxz), ("syk", syk)] {
        match report.fit(8) {
            Some(f) => {
                ok &= f.converged && f.residual_rms < 3.0;
                parts.push(format!(
                    "{name}: A={:.3}+-{:.3} residual_rms={:.2}{}",
                    f.amplitude,
                    f.amplitude_err(),
                    f.residual_rms,
                    if f.converged { "" } else { " (not converged)" }
                ));
            }
            None => {
                ok = false;
                parts.push(format!("{name}: no fit"));
            }
        }
    }
    if let (Some(fx), Some(fz)) = (xx.fit(8), xxz.fit(8)) {
        let follows = (fz.amplitude - phase_l8.0).abs() <= 3.0 * fz.amplitude_err();
        let below = fx.amplitude < phase_l8.0;
        ok &= follows && below;
        parts.push(format!(
            "random-phase L=8 {:.3}: xxz A_L {:+.1} fit stderr away, xx A_L below: {below}",
            phase_l8.0,
            (fz.amplitude - phase_l8.0) / fz.amplitude_err()
        ));
    }
    (ok, parts.join("; "))
}

fn fit_recovery(_: &Path) -> (bool, String) {
    let (a, g0, b) = (5.0, 0.1, 2.0);
    let grid = default_gamma_grid();
    let mut rng = rng_from_seed(3000);
    let mut covered = 0;
    for _ in 0..100 {
        let pts: Vec<DataPoint> = grid
            .iter()
            .map(|&g| {
                let y = generalized_lorentzian(g, a, g0, b);
                let noise: f64 = StandardNormal.sample(&mut rng);
                DataPoint::new(g, y * (1.0 + 0.01 * noise), 0.01 * y)
            })
            .collect();
        if let Ok(f) = fit_generalized_lorentzian(&pts) {
            let within = (f.amplitude - a).abs() <= 3.0 * f.amplitude_err()
                && (f.gamma0 - g0).abs() <= 3.0 * f.gamma0_err()
                && (f.exponent - b).abs() <= 3.0 * f.exponent_err();
            if f.converged && within {
                covered += 1;
            }
        }
    }
    (
        covered >= 95,
        format!("{covered}/100 repetitions recover (A, gamma0, b) within 3 stderr"),
    )
}

/// Largest numeric difference between two CSVs with identical layout.
fn csv_distance(a: &Path, b: &Path) -> f64 {
    let (ta, tb) = (CsvTable::read(a).unwrap(), CsvTable::read(b).unwrap());
    if ta.header != tb.header || ta.rows.len() != tb.rows.len() {
        return f64::INFINITY;
    }
    let mut worst: f64 = 0.0;
    for (ra, rb) in ta.rows.iter().zip(&tb.rows) {
        for (x, y) in ra.iter().zip(rb) {
            match (x.parse::<f64>(), y.parse::<f64>()) {
                (Ok(p), Ok(q)) if p.is_nan() && q.is_nan() => {}
                (Ok(p), Ok(q)) => worst = worst.max((p - q).abs()),
                _ if x == y => {}
                _ => return f64::INFINITY,
            }
        }
    }
    worst
}

fn determinism(out: &Path) -> (bool, String) {
    let run = |threads: usize, tag: &str| -> PathBuf {
        let dir = out.join("determinism").join(tag);
        let sweep = ExperimentConfig {
            model: Model::Syk,
            sites: vec![4, 6, 8],
            gammas: vec![0.01, 0.1, 1.0, 10.0],
            t_max: 6.0,
            burn_in: 2.0,
            n_traj: 12,
            n_disorder: 4,
            n_random: 20,
            output_dir: Some(dir.clone()),
            ..Default::default()
        };
        let unitary = ExperimentConfig {
            sites: vec![6, 8],
            t_max: 10.0,
            ..sweep.clone()
        };
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                run_monitored_sweep(&sweep).unwrap();
                run_unitary(&unitary).unwrap();
                run_random_states(&sweep).unwrap();
            });
        dir
    };
    let reference = run(1, "w1a");
    let others = [run(1, "w1b"), run(2, "w2"), run(4, "w4")];
    let files = [
        "sweep_syk.csv",
        "fits_syk.csv",
        "slopes_syk.csv",
        "unitary_syk_summary.csv",
        "unitary_syk_L8.csv",
        "random_states.csv",
        "random_slopes.csv",
    ];
    let mut worst: f64 = 0.0;
    for dir in &others {
        for f in files {
            worst = worst.max(csv_distance(&reference.join(f), &dir.join(f)));
        }
    }
    (
        worst <= 1e-12,
        format!(
            "max difference over {} CSVs at 1, 2, 4 workers = {worst:.2e}",
            files.len()
        ),
    )
}

fn output_dir() -> PathBuf {
    let target = std::env::var_os("CARGO_TARGET_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target"));
    target.join("acceptance")
}

fn main() {
    let strict = std::env::args().any(|a| a == "--strict");
    let out = output_dir();
    std::fs::create_dir_all(&out).unwrap();
    println!("acceptance outputs: {}", out.display());
    let mut suite = Suite {
        out: out.clone(),
        outcomes: Vec::new(),
    };

    suite.run("stabilizer zero", minutes(1), stabilizer_zero);
    suite.run("closed form", minutes(1), closed_form);
    suite.run("oracle equivalence", minutes(5), oracle_equivalence);
    suite.run("purity identity", minutes(10), purity_identity);
    suite.run("unraveling consistency", minutes(10), unraveling);

    let start = Instant::now();
    let unitary = |model| run_unitary(&unitary_config(&out, model)).unwrap();
    let (u_xx, u_xxz, u_syk) = (unitary(Model::Xx), unitary(Model::Xxz), unitary(Model::Syk));
    let unitary_time = start.elapsed();
    suite.run(
        "chaotic saturation",
        minutes(60).saturating_sub(unitary_time),
        |_| chaotic_saturation(&u_syk),
    );
    suite.run("ordering", minutes(60).saturating_sub(unitary_time), |_| {
        ordering(&u_xx, &u_xxz, &u_syk)
    });

    let start = Instant::now();
    let s_xxz = run_monitored_sweep(&sweep_config(&out, Model::Xxz, vec![6, 8, 10])).unwrap();
    let xxz_time = start.elapsed();
    suite.run("ln 2 slope", minutes(120).saturating_sub(xxz_time), |o| {
        ln2_slopes(o, &s_xxz)
    });

    let start = Instant::now();
    let s_xx = run_monitored_sweep(&sweep_config(&out, Model::Xx, vec![8])).unwrap();
    let s_syk = run_monitored_sweep(&sweep_config(&out, Model::Syk, vec![8])).unwrap();
    let sweep_time = start.elapsed() + xxz_time;
    let phase8 = u_xxz
        .summary
        .iter()
        .find(|s| s.sites == 8)
        .map(|s| (s.phase.mean, s.phase.stderr))
        .unwrap();
    suite.run(
        "lorentzian fit quality",
        minutes(240).saturating_sub(sweep_time),
        |_| fit_quality(&s_xx, &s_xxz, &s_syk, phase8),
    );

    suite.run("fit recovery", minutes(1), fit_recovery);
    suite.run("determinism", minutes(30), determinism);

    let failed = suite.outcomes.iter().filter(|o| !o.pass).count();
    println!("{} passed, {failed} failed", suite.outcomes.len() - failed);
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
