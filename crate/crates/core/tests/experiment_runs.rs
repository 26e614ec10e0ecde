use std::fs;
use std::path::Path;

use qsd_magic::experiment::{
    fit_sweep_file, run_lindblad_check, run_monitored_sweep, run_random_states, run_unitary,
    ExperimentConfig, Manifest, Model, TrajectorySidecar, FIT_HEADER, SWEEP_HEADER,
};
use qsd_magic::output::CsvTable;
use qsd_magic::randomstates::RandomStateKind;

fn small_sweep(model: Model) -> ExperimentConfig {
    ExperimentConfig {
        model,
        sites: vec![4, 6, 8],
        gammas: vec![0.01, 0.1, 1.0, 10.0],
        t_max: 3.0,
        burn_in: 1.0,
        n_traj: 4,
        n_disorder: 3,
        ..Default::default()
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn sweep_writes_stable_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        output_dir: Some(dir.path().into()),
        ..small_sweep(Model::Xxz)
    };
    let report = run_monitored_sweep(&cfg).unwrap();

    let sweep = CsvTable::read(&dir.path().join("sweep_xxz.csv")).unwrap();
    assert_eq!(sweep.header, SWEEP_HEADER);
    assert_eq!(sweep.rows.len(), 12);
    assert!(report.rows.iter().all(|r| r.is_ok() && r.n_traj == 4));
    // rows ordered by L, then gamma
    assert_eq!(report.row(2, 6).unwrap().gamma, 1.0);
    assert_eq!(report.row(2, 6).unwrap().sites, 6);

    let fits = CsvTable::read(&dir.path().join("fits_xxz.csv")).unwrap();
    assert_eq!(fits.header, FIT_HEADER);
    assert_eq!(fits.rows.len(), report.fits.len());
    let slopes = CsvTable::read(&dir.path().join("slopes_xxz.csv")).unwrap();
    assert_eq!(slopes.rows.len(), 4);

    let manifest: Manifest =
        serde_json::from_str(&read(dir.path(), "sweep_xxz_manifest.json")).unwrap();
    assert_eq!(manifest.config, cfg.validated().unwrap());
    assert_eq!(
        manifest
            .seeds
            .iter()
            .filter(|s| s.role == "trajectories")
            .count(),
        12
    );
    for name in &manifest.outputs {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}

#[test]
fn sweep_is_reproducible_across_worker_counts() {
    let run = |threads: usize| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            output_dir: Some(dir.path().into()),
            ..small_sweep(Model::Syk)
        };
        in_pool(threads, || run_monitored_sweep(&cfg).unwrap());
        ["sweep_syk.csv", "fits_syk.csv", "slopes_syk.csv"].map(|n| read(dir.path(), n))
    };
    let one = run(1);
    assert_eq!(one, run(1));
    assert_eq!(one, run(3));
}

#[test]
fn refitting_a_sweep_file_reproduces_the_fits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        output_dir: Some(dir.path().into()),
        ..small_sweep(Model::Xx)
    };
    let report = run_monitored_sweep(&cfg).unwrap();
    let out = dir.path().join("refit.csv");
    let (fits, skipped) = fit_sweep_file(&dir.path().join("sweep_xx.csv"), &out).unwrap();
    assert!(skipped.is_empty(), "{skipped:?}");
    assert_eq!(fits, report.fits);
    assert_eq!(
        read(dir.path(), "refit.csv"),
        read(dir.path(), "fits_xx.csv")
    );
}

#[test]
fn fit_file_errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "gamma,L,stderr\n0.1,4,0.01\n").unwrap();
    let err = fit_sweep_file(&path, &dir.path().join("out.csv")).unwrap_err();
    assert!(err.to_string().contains("mean_sre"), "{err}");
    let missing =
        fit_sweep_file(&dir.path().join("nope.csv"), &dir.path().join("out.csv")).unwrap_err();
    assert!(missing.to_string().contains("nope.csv"), "{missing}");
}

#[test]
fn saved_trajectories_carry_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        sites: vec![4],
        gammas: vec![0.5],
        n_traj: 2,
        record_sz: true,
        save_trajectories: true,
        fit: false,
        output_dir: Some(dir.path().into()),
        ..small_sweep(Model::Xxz)
    };
    run_monitored_sweep(&cfg).unwrap();
    let table = CsvTable::read(&dir.path().join("trajectories/xxz_L4_g0_k1.csv")).unwrap();
    assert_eq!(table.header, ["t", "sre", "sz_1", "sz_2", "sz_3", "sz_4"]);
    assert_eq!(table.rows.len(), 31);
    let sidecar: TrajectorySidecar =
        serde_json::from_str(&read(dir.path(), "trajectories/xxz_L4_g0_k1.json")).unwrap();
    assert_eq!(sidecar.params.gamma, 0.5);
    assert!(sidecar.norm_drift < 1e-10);
}

#[test]
fn unitary_outputs_and_xx_below_random_phase() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        model: Model::Xx,
        sites: vec![6, 8],
        t_max: 20.0,
        burn_in: 5.0,
        n_random: 40,
        output_dir: Some(dir.path().into()),
        ..Default::default()
    };
    let report = run_unitary(&cfg).unwrap();
    let series = CsvTable::read(&dir.path().join("unitary_xx_L8.csv")).unwrap();
    assert_eq!(series.header, ["t", "sre", "sre_rms"]);
    assert_eq!(series.rows.len(), 201);
    let summary = CsvTable::read(&dir.path().join("unitary_xx_summary.csv")).unwrap();
    assert_eq!(
        summary.header,
        [
            "L",
            "time_avg_sre",
            "stderr",
            "n_realizations",
            "phase_mean",
            "phase_stderr",
            "haar_mean",
            "haar_stderr",
            "ln_dim"
        ]
    );
    for s in &report.summary {
        assert_eq!(s.n_realizations, 1);
        assert!(
            s.time_avg < s.phase.mean - 3.0 * s.phase.stderr,
            "L={}",
            s.sites
        );
    }
}

#[test]
fn random_state_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        sites: vec![4, 6, 8],
        n_random: 20,
        output_dir: Some(dir.path().into()),
        ..Default::default()
    };
    let report = run_random_states(&cfg).unwrap();
    assert_eq!(report.baselines.len(), 6);
    assert_eq!(report.slopes.len(), 2);
    let table = CsvTable::read(&dir.path().join("random_states.csv")).unwrap();
    assert_eq!(
        table.header,
        ["kind", "L", "mean_sre", "stderr", "n_samples", "ln_dim"]
    );
    assert_eq!(table.rows[0][0], "phase");
    let slopes = CsvTable::read(&dir.path().join("random_slopes.csv")).unwrap();
    assert_eq!(
        slopes.header,
        ["kind", "slope", "slope_err", "intercept", "intercept_err"]
    );
    assert!(report
        .baselines
        .iter()
        .all(|b| b.mean > 0.0 && b.mean < b.ln_dim));
    assert!(report
        .slopes
        .iter()
        .any(|(k, _)| *k == RandomStateKind::Haar));
}

#[test]
fn lindblad_check_is_exact_without_measurement() {
    let cfg = ExperimentConfig {
        sites: vec![4],
        gammas: vec![0.0],
        t_max: 2.0,
        burn_in: 0.0,
        n_traj: 3,
        ..Default::default()
    };
    let report = run_lindblad_check(&cfg).unwrap();
    assert!(report.pass);
    assert!(report.max_abs_diff < 1e-8, "{}", report.max_abs_diff);
    assert!(report.rows.iter().all(|r| r.stderr < 1e-14 && r.z == 0.0));
}

#[test]
fn lindblad_check_flags_low_power() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        sites: vec![4],
        gammas: vec![0.5],
        t_max: 1.0,
        burn_in: 0.0,
        n_traj: 10,
        output_dir: Some(dir.path().into()),
        ..Default::default()
    };
    let report = run_lindblad_check(&cfg).unwrap();
    assert!(report.low_power);
    let json: serde_json::Value =
        serde_json::from_str(&read(dir.path(), "lindblad_xxz_report.json")).unwrap();
    assert_eq!(json["low_power"], true);
    assert!(json["manifest"]["warnings"][0]
        .as_str()
        .unwrap()
        .contains("low statistical power"));
    let big = ExperimentConfig {
        sites: vec![8],
        ..cfg
    };
    assert!(run_lindblad_check(&big).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        ExperimentConfig {
            sites: vec![5],
            ..Default::default()
        },
        ExperimentConfig {
            sites: vec![16],
            ..Default::default()
        },
        ExperimentConfig {
            gammas: vec![-0.1],
            ..Default::default()
        },
        ExperimentConfig {
            n_traj: 0,
            ..Default::default()
        },
        ExperimentConfig {
            burn_in: 50.0,
            ..Default::default()
        },
    ];
    for cfg in bad {
        assert!(run_monitored_sweep(&cfg).is_err(), "{cfg:?}");
    }
    let unknown: Result<ExperimentConfig, _> = serde_json::from_str(r#"{"modle": "xx"}"#);
    assert!(unknown.is_err());
}
