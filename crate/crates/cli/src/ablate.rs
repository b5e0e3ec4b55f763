use std::path::PathBuf;
use std::time::Instant;

use flowcast::sampler::SolverConfig;
use serde::{Deserialize, Serialize};

use crate::config::{AblationCell, RunConfig};
use crate::data::load_trajectories;
use crate::error::Result;
use crate::forecast::run_forecast;
use crate::output::{write_json, write_table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub mean_smape: f64,
    pub mean_smape_first_lyapunov_time: f64,
    pub mean_vpt: f64,
    /// Mean sMAPE per forecast step across trajectories.
    pub smape_curve: Vec<f64>,
    pub failed_units: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub pooled_bank_hash: String,
    pub rows: Vec<AblationRow>,
    pub config: RunConfig,
}

/// One forecast run per cell with the shared master seed.
pub fn run_ablation(cfg: &RunConfig, trajs: &[flowcast::Trajectory], cells: &[AblationCell]) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(cells.len());
    let mut pooled_bank_hash = String::new();
    for &cell in cells {
        let solver = SolverConfig {
            steps: cell.steps,
            scheme: cell.scheme,
            top_r: cell.top_r,
            ..cfg.solver
        };
        let start = Instant::now();
        let (run, _) = run_forecast(cfg, trajs, solver)?;
        let seconds = start.elapsed().as_secs_f64();
        pooled_bank_hash = run.pooled_bank_hash.clone();
        let reports: Vec<_> = run.results.iter().filter_map(|r| r.report.as_ref()).collect();
        let h = cfg.forecast.horizon;
        let smape_curve = (0..h)
            .map(|k| reports.iter().map(|r| r.smape_per_step[k]).sum::<f64>() / reports.len().max(1) as f64)
            .collect();
        log::info!(
            "steps={} scheme={} R={:?}: mean sMAPE {:.3} ({seconds:.1}s)",
            cell.steps,
            cell.scheme.name(),
            cell.top_r,
            run.summary.mean_smape
        );
        rows.push(AblationRow {
            cell,
            mean_smape: run.summary.mean_smape,
            mean_smape_first_lyapunov_time: run.summary.mean_smape_first_lyapunov_time,
            mean_vpt: run.summary.mean_vpt,
            smape_curve,
            failed_units: run.failed_units(),
            seconds,
        });
    }
    Ok(AblationTable {
        pooled_bank_hash,
        rows,
        config: cfg.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct AblateOutput {
    pub file: PathBuf,
    pub table: AblationTable,
}

/// Steps x scheme x truncation comparison written to `<out>/ablate`.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblateOutput> {
    cfg.validate()?;
    let trajs = load_trajectories(&cfg.data_dir())?;
    let table = run_ablation(cfg, &trajs, &cfg.ablate.cells())?;
    let dir = cfg.out.join("ablate");
    let file = dir.join("ablation.json");
    write_json(&file, &table)?;
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.cell.steps.to_string(),
                r.cell.scheme.name().to_string(),
                r.cell.top_r.map_or("dense".to_string(), |v| v.to_string()),
                r.mean_smape.to_string(),
                r.mean_smape_first_lyapunov_time.to_string(),
                r.mean_vpt.to_string(),
                r.failed_units.to_string(),
                format!("{:.3}", r.seconds),
            ]
        })
        .collect();
    write_table(
        &dir.join("ablation.csv"),
        &[
            "steps",
            "scheme",
            "truncation",
            "mean_smape",
            "mean_smape_first_lyapunov_time",
            "mean_vpt",
            "failed_units",
            "seconds",
        ],
        &rows,
    )?;
    cfg.echo("config.resolved.json")?;
    Ok(AblateOutput { file, table })
}
