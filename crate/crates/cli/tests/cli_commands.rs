use std::path::Path;
use std::process::Command;

use flowcast::bank::{extract_transitions, save_bank, Trajectory, TransitionBank};
use flowcast::dynamics::SystemName;
use flowcast::sampler::{sample_rng, Sampler, Scheme, SolverConfig};
use flowcast::{BridgeSchedule, PathFamily};
use flowcast_cli::ablate::run_ablation;
use flowcast_cli::config::{AblationCell, GridObjective};
use flowcast_cli::data::load_trajectories;
use flowcast_cli::gridsearch::{best_row, grid_search};
use flowcast_cli::{cmd_ablate, cmd_diagnose, cmd_forecast, cmd_generate, cmd_gridsearch, CliError, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        out: out.to_path_buf(),
        seed: 5,
        ..Default::default()
    };
    cfg.data.n_trajectories = 4;
    cfg.data.length = 160;
    cfg.data.lyapunov_exponent = Some(0.9);
    cfg.forecast.conditioning = 120;
    cfg.forecast.horizon = 30;
    cfg.forecast.attractor_stats = false;
    cfg.solver.steps = 30;
    cfg
}

fn flowcast_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flowcast"))
}

#[test]
fn default_generate_writes_twenty_lorenz_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        out: dir.path().to_path_buf(),
        ..Default::default()
    };
    let out = cmd_generate(&cfg).unwrap();
    assert_eq!(out.manifest.system.name, SystemName::Lorenz63);
    assert_eq!(out.manifest.trajectories.len(), 20);
    for e in &out.manifest.trajectories {
        assert_eq!(e.rows, 812);
        let text = std::fs::read_to_string(out.dir.join(&e.file)).unwrap();
        // header plus one row per state
        assert_eq!(text.lines().count(), 813);
    }
    assert!((out.manifest.lyapunov_exponent - 0.906).abs() < 0.05);
}

#[test]
fn minimal_aizawa_run_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let status = flowcast_bin()
        .args(["--out", dir.path().to_str().unwrap(), "generate"])
        .args(["--system", "aizawa", "--n", "1", "--length", "2"])
        .status()
        .unwrap();
    assert!(status.success());
    let trajs = load_trajectories(&dir.path().join("data")).unwrap();
    assert_eq!(trajs.len(), 1);
    assert_eq!(trajs[0].len(), 2);
    assert!(dir.path().join("config.resolved.json").is_file());
}

#[test]
fn same_seed_gives_identical_manifests() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg = small_config(a.path());
    let ma = cmd_generate(&cfg).unwrap();
    cfg.out = b.path().to_path_buf();
    let mb = cmd_generate(&cfg).unwrap();
    assert_eq!(ma.manifest.trajectories, mb.manifest.trajectories);
    for e in &ma.manifest.trajectories {
        let fa = std::fs::read(ma.dir.join(&e.file)).unwrap();
        let fb = std::fs::read(mb.dir.join(&e.file)).unwrap();
        assert_eq!(fa, fb);
    }
    // the manifests differ only in the embedded output path
    let mut other = mb.manifest.clone();
    other.config.out = ma.manifest.config.out.clone();
    assert_eq!(ma.manifest, other);
}

#[test]
fn zero_horizon_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.forecast.horizon = 0;
    assert!(matches!(cmd_forecast(&cfg), Err(CliError::Config(_))));
}

#[test]
fn missing_trajectories_are_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(&dir.path().join("nowhere"));
    assert!(matches!(cmd_forecast(&cfg), Err(CliError::Io { .. })));
}

#[test]
fn single_sample_is_conditional_and_many_samples_are_probabilistic() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cmd_generate(&cfg).unwrap();

    let det = cmd_forecast(&cfg).unwrap();
    assert!(!det.run.solver.init_noise);
    assert_eq!(det.run.failed_units(), 0);
    for r in &det.run.results {
        let rep = r.report.as_ref().unwrap();
        assert!(rep.crps_per_step.is_none());
        assert_eq!(rep.smape_per_step.len(), 30);
    }
    assert!(det.dir.join("report.json").is_file());
    assert!(det.dir.join("forecast_long.csv").is_file());
    assert_eq!(det.ensemble_files.len(), 4);

    cfg.forecast.samples = 6;
    let prob = cmd_forecast(&cfg).unwrap();
    assert!(prob.run.solver.init_noise);
    for r in &prob.run.results {
        assert_eq!(r.report.as_ref().unwrap().crps_per_step.as_ref().unwrap().len(), 30);
    }
    assert!(prob.run.summary.mean_crps_step1.is_some());
}

#[test]
fn one_point_grid_returns_that_point() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cmd_generate(&cfg).unwrap();
    cfg.gridsearch.sigma_min_values = Some(vec![0.3]);
    cfg.gridsearch.sigma_values = Some(vec![0.1]);
    let out = cmd_gridsearch(&cfg).unwrap();
    assert_eq!(out.result.rows.len(), 1);
    assert_eq!((out.result.best.sigma_min, out.result.best.sigma), (0.3, 0.1));
}

#[test]
fn sweep_table_has_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cmd_generate(&cfg).unwrap();
    cfg.gridsearch.sigma_min_factors = vec![0.01, 0.03, 0.1];
    cfg.gridsearch.sigma_factors = vec![0.02, 0.08];
    let out = cmd_gridsearch(&cfg).unwrap();
    assert_eq!(out.result.rows.len(), 6);
    let sweep = std::fs::read_to_string(out.file.with_file_name("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 7);
    assert!(out.result.rows.iter().all(|r| r.score.is_finite()));
}

fn blob_bank(rng: &mut ChaCha8Rng, per_blob: usize) -> TransitionBank {
    let centers = [[0.0, 0.0], [3.0, 0.5], [1.0, 3.0]];
    let shifts = [[0.4, 0.2], [-0.3, 0.5], [0.2, -0.6]];
    let mut trajs = Vec::new();
    for (k, (c, s)) in centers.iter().zip(&shifts).enumerate() {
        for i in 0..per_blob {
            let x: Vec<f64> = c.iter().map(|v| v + 0.3 * rng.random::<f64>() - 0.15).collect();
            let y: Vec<f64> = x.iter().zip(s).map(|(a, b)| a + b).collect();
            trajs.push(Trajectory::new(format!("b{k}_{i}"), 1.0, vec![x, y]).unwrap());
        }
    }
    extract_transitions(&trajs).unwrap()
}

/// Held-out targets are drawn from the model itself at a known bandwidth;
/// CRPS is proper, so the sweep should land on that bandwidth or next to it.
#[test]
fn gridsearch_recovers_the_generating_bandwidth_of_a_blob_bank() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let train = blob_bank(&mut rng, 40);
    let (true_min, sigma) = (0.1, 0.2);
    let solver = SolverConfig {
        steps: 50,
        ..Default::default()
    };
    let fam = PathFamily::GaussianBridge(BridgeSchedule::new(true_min, sigma).unwrap());
    let generator = Sampler::new(&train, fam, solver).unwrap();
    let probes = blob_bank(&mut rng, 60);
    let held: Vec<Trajectory> = (0..probes.len())
        .map(|j| {
            let x = probes.x1(j).to_vec();
            let y = generator.one_step(&x, &mut sample_rng(99, j)).unwrap();
            Trajectory::new(format!("h{j}"), 1.0, vec![x, y]).unwrap()
        })
        .collect();
    let holdout_bank = extract_transitions(&held).unwrap();
    let idx: Vec<usize> = (0..holdout_bank.len()).collect();
    let mins = [0.025, 0.05, 0.1, 0.2, 0.4];
    let grid: Vec<(f64, f64)> = mins.iter().map(|&m| (m, sigma)).collect();
    let rows = grid_search(&holdout_bank, &train, &idx, &grid, solver, GridObjective::OneStepCrps, 16, 3).unwrap();
    let best = best_row(&rows).unwrap();
    let pos = mins.iter().position(|&m| m == best.sigma_min).unwrap();
    assert!((1..=3).contains(&pos), "picked {} from {rows:?}", best.sigma_min);
}

#[test]
fn single_cell_ablation_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cmd_generate(&cfg).unwrap();
    let trajs = load_trajectories(&cfg.data_dir()).unwrap();
    let cell = AblationCell {
        steps: 20,
        scheme: Scheme::Rk4,
        top_r: Some(16),
    };
    let table = run_ablation(&cfg, &trajs, &[cell]).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].cell, cell);
    assert_eq!(table.rows[0].smape_curve.len(), 30);

    cfg.ablate.steps = vec![20];
    cfg.ablate.schemes = vec![Scheme::ForwardEuler];
    cfg.ablate.truncations = vec![None];
    let out = cmd_ablate(&cfg).unwrap();
    assert_eq!(out.table.rows.len(), 1);
    assert!(!out.table.pooled_bank_hash.is_empty());
    let csv = std::fs::read_to_string(out.file.with_file_name("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn default_diagnostics_all_pass() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        out: dir.path().to_path_buf(),
        ..Default::default()
    };
    let out = cmd_diagnose(&cfg).unwrap();
    let names: Vec<&str> = out.reports.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["truncation", "lipschitz", "duhamel", "equivariance", "cost"]);
    for r in &out.reports {
        assert!(r.pass, "{} failed: max violation {}", r.name, r.max_violation);
        let text = std::fs::read_to_string(out.dir.join(format!("{}.json", r.name))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v["bank_hash"].is_string() && v["config"].is_object());
    }
    assert_eq!(out.failed_units(), 0);
}

#[test]
fn only_flag_selects_one_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    cmd_generate(&cfg).unwrap();
    let status = flowcast_bin()
        .args(["--out", dir.path().to_str().unwrap(), "diagnose", "--only", "duhamel"])
        .status()
        .unwrap();
    assert!(status.success());
    let files: Vec<_> = std::fs::read_dir(dir.path().join("diagnose")).unwrap().collect();
    assert_eq!(files.len(), 1);
    assert!(dir.path().join("diagnose/duhamel.json").is_file());
}

#[test]
fn bad_bank_path_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.diagnose.bank = Some(dir.path().join("missing.json"));
    let err = cmd_diagnose(&cfg).unwrap_err();
    assert!(matches!(err, CliError::Core(flowcast::Error::Io { .. })), "{err:?}");

    let status = flowcast_bin()
        .args(["--out", dir.path().to_str().unwrap(), "diagnose", "--bank"])
        .arg(dir.path().join("missing.json"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn saved_bank_feeds_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bank = blob_bank(&mut rng, 10);
    let path = dir.path().join("bank.json");
    save_bank(&bank, &path).unwrap();
    let mut cfg = small_config(dir.path());
    cfg.diagnose.bank = Some(path);
    cfg.diagnose.only = Some(vec!["truncation".into(), "equivariance".into()]);
    cfg.diagnose.truncation_r = vec![1, 8];
    cfg.diagnose.probes = 100;
    let out = cmd_diagnose(&cfg).unwrap();
    assert_eq!(out.reports.len(), 2);
    assert!(out.reports.iter().all(|r| r.pass));
}
