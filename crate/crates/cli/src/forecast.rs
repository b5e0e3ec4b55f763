use std::path::PathBuf;

use flowcast::bank::{extract_transitions, save_bank, Trajectory, COUNT_CONVENTION};
use flowcast::metrics::{correlation_dimension, kl_divergence, log_radius_grid, CorrDimComparison, MetricReport};
use flowcast::sampler::{derive_seed, ForecastEnsemble, Sampler, SolverConfig};
use flowcast::PathFamily;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BankSource, RunConfig};
use crate::data::{bank_for, conditioning_windows, load_trajectories, resolve_family};
use crate::error::Result;
use crate::output::{ensure_dir, write_json, LongTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryForecast {
    pub id: String,
    pub index: usize,
    pub seed: u64,
    pub bank_hash: String,
    pub bank_m: usize,
    pub report: Option<MetricReport>,
    /// Coordinate-mean absolute error of the ensemble mean at the first step.
    pub abs_error_step1: Option<f64>,
    pub failed_samples: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSummary {
    pub trajectories: usize,
    pub failed_trajectories: usize,
    pub failed_samples: usize,
    pub mean_vpt: f64,
    pub mean_smape: f64,
    pub mean_smape_first_lyapunov_time: f64,
    pub mean_crps_step1: Option<f64>,
    pub mean_abs_error_step1: f64,
    pub corr_dim: Option<CorrDimComparison>,
    pub mean_kl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRun {
    pub family: PathFamily,
    pub solver: SolverConfig,
    pub samples: usize,
    pub bank_source: BankSource,
    pub pooled_bank_hash: String,
    pub pooled_bank_m: usize,
    pub count_convention: String,
    pub results: Vec<TrajectoryForecast>,
    pub summary: ForecastSummary,
}

impl ForecastRun {
    /// Units that did not finish cleanly: any failed sample or trajectory.
    pub fn failed_units(&self) -> usize {
        self.results
            .iter()
            .filter(|r| r.error.is_some() || r.failed_samples > 0)
            .count()
    }
}

/// Header stored with every ensemble file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMetadata {
    pub trajectory: String,
    pub origin_index: usize,
    pub seed: u64,
    pub bank_hash: String,
    pub bank_m: usize,
    pub count_convention: String,
    pub bank_source: BankSource,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFile {
    pub metadata: EnsembleMetadata,
    pub ensemble: ForecastEnsemble,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Forecasts `horizon` steps past the conditioning window of every
/// trajectory. With one sample the initial state is the conditioning point
/// itself (the mean of the initial Gaussian); with several, `Z_0` is sampled
/// as configured in `solver.init_noise`.
pub fn run_forecast(
    cfg: &RunConfig,
    trajs: &[Trajectory],
    solver: SolverConfig,
) -> Result<(ForecastRun, Vec<Option<ForecastEnsemble>>)> {
    cfg.validate()?;
    let f = &cfg.forecast;
    let need = f.conditioning + f.horizon;
    if let Some(short) = trajs.iter().find(|t| t.len() < need) {
        return Err(flowcast::Error::InvalidTrajectory {
            id: short.id.clone(),
            reason: format!("{} points, need {need} for conditioning plus horizon", short.len()),
        }
        .into());
    }
    let windows = conditioning_windows(trajs, f.conditioning)?;
    let pooled = extract_transitions(&windows)?;
    let family = resolve_family(cfg, &pooled)?;
    let mut solver = solver;
    if f.samples == 1 {
        solver.init_noise = false;
    }
    solver.validate(&family)?;
    let n_forecast = f.max_trajectories.unwrap_or(trajs.len()).min(trajs.len());

    let outcomes: Vec<(TrajectoryForecast, Option<ForecastEnsemble>)> = (0..n_forecast)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let traj = &trajs[i];
            let bank = bank_for(&windows, &pooled, f.bank_source, i)?;
            let seed = derive_seed(cfg.seed, i as u64);
            let mut rec = TrajectoryForecast {
                id: traj.id.clone(),
                index: i,
                seed,
                bank_hash: bank.content_hash(),
                bank_m: bank.len(),
                report: None,
                abs_error_step1: None,
                failed_samples: 0,
                error: None,
            };
            let sampler = Sampler::new(&bank, family, SolverConfig { seed, ..solver })?;
            let origin = &traj.states[f.conditioning - 1];
            let truth = &traj.states[f.conditioning..need];
            let ens = match sampler.ensemble(origin, f.horizon, f.samples) {
                Ok(e) => e,
                Err(e) => {
                    log::warn!("trajectory {}: {e}", traj.id);
                    rec.failed_samples = f.samples;
                    rec.error = Some(e.to_string());
                    return Ok((rec, None));
                }
            };
            rec.failed_samples = ens.failures.len();
            let point = if ens.samples.len() == 1 {
                ens.samples[0].clone()
            } else {
                ens.mean()
            };
            let probabilistic = (f.samples > 1).then_some(ens.samples.as_slice());
            let mut report = MetricReport::evaluate(truth, &point, probabilistic, &cfg.metrics)?;
            rec.abs_error_step1 = Some(mean(point[0].iter().zip(&truth[0]).map(|(a, b)| (a - b).abs())));
            if f.attractor_stats && truth.len() >= 100 {
                let grid = log_radius_grid(truth, cfg.metrics.corr_dim_radii);
                let window = cfg.metrics.corr_dim_fit_window;
                match (
                    correlation_dimension(&point, &grid, window),
                    correlation_dimension(truth, &grid, window),
                ) {
                    (Ok(p), Ok(t)) => report.corr_dim = CorrDimComparison::from_pairs(&[(p.dimension, t.dimension)]),
                    (Err(e), _) | (_, Err(e)) => log::warn!("trajectory {}: correlation dimension: {e}", traj.id),
                }
                report.kl = kl_divergence(truth, &point, cfg.metrics.kl_bins_per_dim).ok();
            }
            rec.report = Some(report);
            Ok((rec, Some(ens)))
        })
        .collect::<Result<Vec<_>>>()?;

    let (results, ensembles): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    let reports: Vec<&MetricReport> = results.iter().filter_map(|r| r.report.as_ref()).collect();
    let steps_per_lt = cfg.metrics.lyapunov_time_points;
    let crps1: Vec<f64> = reports
        .iter()
        .filter_map(|r| r.crps_per_step.as_ref().map(|c| c[0]))
        .collect();
    let corr_pairs: Vec<(f64, f64)> = reports
        .iter()
        .filter_map(|r| r.corr_dim.as_ref().map(|c| (c.predicted, c.truth)))
        .collect();
    let kls: Vec<f64> = reports.iter().filter_map(|r| r.kl).collect();
    let summary = ForecastSummary {
        trajectories: results.len(),
        failed_trajectories: results.iter().filter(|r| r.error.is_some()).count(),
        failed_samples: results.iter().map(|r| r.failed_samples).sum(),
        mean_vpt: mean(reports.iter().map(|r| r.vpt)),
        mean_smape: mean(reports.iter().map(|r| r.mean_smape(usize::MAX))),
        mean_smape_first_lyapunov_time: mean(reports.iter().map(|r| r.mean_smape(steps_per_lt))),
        mean_crps_step1: (!crps1.is_empty()).then(|| mean(crps1.iter().copied())),
        mean_abs_error_step1: mean(results.iter().filter_map(|r| r.abs_error_step1)),
        corr_dim: CorrDimComparison::from_pairs(&corr_pairs),
        mean_kl: (!kls.is_empty()).then(|| mean(kls.iter().copied())),
    };
    let run = ForecastRun {
        family,
        solver,
        samples: f.samples,
        bank_source: f.bank_source,
        pooled_bank_hash: pooled.content_hash(),
        pooled_bank_m: pooled.len(),
        count_convention: COUNT_CONVENTION.to_string(),
        results,
        summary,
    };
    Ok((run, ensembles))
}

#[derive(Debug, Clone)]
pub struct ForecastOutput {
    pub dir: PathBuf,
    pub run: ForecastRun,
    pub ensemble_files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    config: &'a RunConfig,
    run: &'a ForecastRun,
}

/// Loads trajectories, forecasts, evaluates and writes ensembles, the
/// report, the pooled bank and a long-format table under `<out>/forecast`.
pub fn cmd_forecast(cfg: &RunConfig) -> Result<ForecastOutput> {
    cfg.validate()?;
    let trajs = load_trajectories(&cfg.data_dir())?;
    let (run, ensembles) = run_forecast(cfg, &trajs, cfg.solver)?;
    let dir = cfg.out.join("forecast");
    let windows = conditioning_windows(&trajs, cfg.forecast.conditioning)?;
    ensure_dir(&dir)?;
    save_bank(&extract_transitions(&windows)?, &dir.join("bank.json"))?;

    let mut files = Vec::new();
    let mut table = LongTable::default();
    let c = cfg.forecast.conditioning;
    for (res, ens) in run.results.iter().zip(&ensembles) {
        let traj = &trajs[res.index];
        for (h, state) in traj.states[c..c + cfg.forecast.horizon].iter().enumerate() {
            for (k, v) in state.iter().enumerate() {
                table.push(&res.id, h + 1, &format!("truth_x{k}"), *v, None);
            }
        }
        if let Some(ens) = ens {
            for (sample, path) in ens.sample_ids.iter().zip(&ens.samples) {
                for (h, state) in path.iter().enumerate() {
                    for (k, v) in state.iter().enumerate() {
                        table.push(&res.id, h + 1, &format!("forecast_x{k}"), *v, Some(*sample));
                    }
                }
            }
            let file = dir.join("ensembles").join(format!("{}.json", res.id));
            let content = EnsembleFile {
                metadata: EnsembleMetadata {
                    trajectory: res.id.clone(),
                    origin_index: c - 1,
                    seed: res.seed,
                    bank_hash: res.bank_hash.clone(),
                    bank_m: res.bank_m,
                    count_convention: COUNT_CONVENTION.to_string(),
                    bank_source: cfg.forecast.bank_source,
                    config: cfg.clone(),
                },
                ensemble: ens.clone(),
            };
            write_json(&file, &content)?;
            files.push(file);
        }
        if let Some(r) = &res.report {
            for (h, v) in r.smape_per_step.iter().enumerate() {
                table.push(&res.id, h + 1, "smape", *v, None);
            }
            if let Some(crps) = &r.crps_per_step {
                for (h, v) in crps.iter().enumerate() {
                    table.push(&res.id, h + 1, "crps", *v, None);
                }
            }
        }
    }
    table.write(&dir.join("forecast_long.csv"))?;
    write_json(&dir.join("report.json"), &ReportFile { config: cfg, run: &run })?;
    cfg.echo("config.resolved.json")?;
    Ok(ForecastOutput {
        dir,
        run,
        ensemble_files: files,
    })
}
