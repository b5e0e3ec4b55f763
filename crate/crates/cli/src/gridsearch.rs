use std::path::PathBuf;

use flowcast::bank::{extract_transitions, TransitionBank};
use flowcast::metrics::crps;
use flowcast::sampler::{derive_seed, sample_rng, Sampler, SolverConfig};
use flowcast::{BridgeSchedule, PathFamily};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{GridObjective, RunConfig};
use crate::data::{conditioning_windows, load_trajectories, TunedParams};
use crate::error::{CliError, Result};
use crate::output::{write_json, write_table};

/// Stream index reserved for the held-out split.
const SPLIT_STREAM: u64 = 0x5EED_0001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub sigma_min: f64,
    pub sigma: f64,
    pub score: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutput {
    pub best: TunedParams,
    pub best_score: f64,
    pub objective: GridObjective,
    pub data_scale: f64,
    pub train_m: usize,
    pub holdout: Vec<usize>,
    pub bank_hash: String,
    pub rows: Vec<GridRow>,
    pub config: RunConfig,
}

/// `(sigma_min, sigma)` pairs: absolute values when given, otherwise the
/// factor grids times `scale`.
pub fn bandwidth_grid(cfg: &RunConfig, scale: f64) -> Result<Vec<(f64, f64)>> {
    let g = &cfg.gridsearch;
    let mins = g
        .sigma_min_values
        .clone()
        .unwrap_or_else(|| g.sigma_min_factors.iter().map(|f| f * scale).collect());
    let sigmas = g
        .sigma_values
        .clone()
        .unwrap_or_else(|| g.sigma_factors.iter().map(|f| f * scale).collect());
    if mins.is_empty() || sigmas.is_empty() {
        return Err(CliError::Config("bandwidth grid is empty".into()));
    }
    Ok(mins
        .iter()
        .flat_map(|&m| sigmas.iter().map(move |&s| (m, s)))
        .collect())
}

/// Held-out indices for a bank of `m` transitions, fixed by `seed`.
pub fn holdout_split(m: usize, fraction: f64, cap: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if m < 2 {
        return Err(CliError::Config(format!("grid search needs at least 2 transitions, got {m}")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CliError::Config(format!("holdout fraction must be in (0, 1), got {fraction}")));
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, SPLIT_STREAM)));
    let n = ((fraction * m as f64).round() as usize).clamp(1, m - 1).min(cap.max(1));
    let mut held = idx[..n].to_vec();
    let mut train = idx[n..].to_vec();
    held.sort_unstable();
    train.sort_unstable();
    Ok((held, train))
}

/// Scores every grid point on the held-out transitions of `bank`.
#[allow(clippy::too_many_arguments)]
pub fn grid_search(
    bank: &TransitionBank,
    train: &TransitionBank,
    holdout: &[usize],
    grid: &[(f64, f64)],
    solver: SolverConfig,
    objective: GridObjective,
    crps_samples: usize,
    seed: u64,
) -> Result<Vec<GridRow>> {
    if grid.is_empty() {
        return Err(CliError::Config("bandwidth grid is empty".into()));
    }
    grid.iter()
        .map(|&(sigma_min, sigma)| {
            let fam = PathFamily::GaussianBridge(BridgeSchedule::new(sigma_min, sigma)?);
            let cfg = SolverConfig {
                init_noise: objective == GridObjective::OneStepCrps,
                seed,
                ..solver
            };
            let sampler = Sampler::new(train, fam, cfg)?;
            let scores: Vec<Option<f64>> = holdout
                .par_iter()
                .map(|&j| {
                    let (x1, x2) = (bank.x1(j), bank.x2(j));
                    match objective {
                        GridObjective::OneStepError => {
                            let y = sampler.one_step(x1, &mut sample_rng(seed, j)).ok()?;
                            Some(y.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                        }
                        GridObjective::OneStepCrps => {
                            let s = Sampler::new(train, fam, SolverConfig { seed: derive_seed(seed, j as u64), ..cfg })
                                .ok()?;
                            let ens = s.ensemble(x1, 1, crps_samples).ok()?;
                            if !ens.failures.is_empty() {
                                return None;
                            }
                            let d = x2.len();
                            Some((0..d).map(|k| crps(&ens.marginal(0, k), x2[k])).sum::<f64>() / d as f64)
                        }
                    }
                })
                .collect();
            let failures = scores.iter().filter(|s| s.is_none()).count();
            let score = if failures > 0 {
                f64::INFINITY
            } else {
                scores.iter().flatten().sum::<f64>() / scores.len() as f64
            };
            Ok(GridRow {
                sigma_min,
                sigma,
                score,
                failures,
            })
        })
        .collect()
}

/// First row with the smallest finite score.
pub fn best_row(rows: &[GridRow]) -> Result<&GridRow> {
    rows.iter()
        .filter(|r| r.score.is_finite())
        .fold(None, |best: Option<&GridRow>, r| match best {
            Some(b) if b.score <= r.score => Some(b),
            _ => Some(r),
        })
        .ok_or_else(|| CliError::Config("every grid point failed on the held-out set".into()))
}

/// Grid search on an in-memory bank.
pub fn tune(cfg: &RunConfig, bank: &TransitionBank) -> Result<GridOutput> {
    let g = &cfg.gridsearch;
    let grid = bandwidth_grid(cfg, bank.mean_scale())?;
    let cap = match g.objective {
        GridObjective::OneStepError => g.max_holdout,
        GridObjective::OneStepCrps => g.crps_max_holdout,
    };
    let (holdout, train_idx) = holdout_split(bank.len(), g.holdout_fraction, cap, cfg.seed)?;
    let train = bank.subset(&train_idx)?;
    let rows = grid_search(bank, &train, &holdout, &grid, cfg.solver, g.objective, g.crps_samples, cfg.seed)?;
    let best = best_row(&rows)?;
    log::info!(
        "best sigma_min = {:.4}, sigma = {:.4} (score {:.4e})",
        best.sigma_min,
        best.sigma,
        best.score
    );
    Ok(GridOutput {
        best: TunedParams {
            sigma_min: best.sigma_min,
            sigma: best.sigma,
        },
        best_score: best.score,
        objective: g.objective,
        data_scale: bank.mean_scale(),
        train_m: train.len(),
        holdout,
        bank_hash: bank.content_hash(),
        rows,
        config: cfg.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct GridsearchOutput {
    pub file: PathBuf,
    pub result: GridOutput,
}

/// Tunes `(sigma_min, sigma)` on the conditioning-window bank and writes
/// `<out>/gridsearch/gridsearch.json` plus a sweep table.
pub fn cmd_gridsearch(cfg: &RunConfig) -> Result<GridsearchOutput> {
    cfg.validate()?;
    let trajs = load_trajectories(&cfg.data_dir())?;
    let windows = conditioning_windows(&trajs, cfg.forecast.conditioning.min(trajs[0].len()))?;
    let bank = extract_transitions(&windows)?;
    let result = tune(cfg, &bank)?;
    let dir = cfg.out.join("gridsearch");
    let file = dir.join("gridsearch.json");
    write_json(&file, &result)?;
    let rows: Vec<Vec<String>> = result
        .rows
        .iter()
        .map(|r| {
            vec![
                r.sigma_min.to_string(),
                r.sigma.to_string(),
                r.score.to_string(),
                r.failures.to_string(),
            ]
        })
        .collect();
    write_table(&dir.join("sweep.csv"), &["sigma_min", "sigma", "score", "failures"], &rows)?;
    cfg.echo("config.resolved.json")?;
    Ok(GridsearchOutput { file, result })
}
