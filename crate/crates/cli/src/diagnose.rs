use std::path::PathBuf;

use flowcast::bank::{extract_transitions, load_bank, TransitionBank};
use flowcast::diagnostics::{
    check_duhamel, check_equivariance, check_lipschitz_bound, check_truncation_bound, measure_cost, probe_point,
    DiagnosticReport,
};
use flowcast::sampler::derive_seed;
use flowcast::PathFamily;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{RunConfig, DIAGNOSTIC_NAMES};
use crate::data::{conditioning_windows, generate_in_memory, load_trajectories, resolve_family};
use crate::error::{CliError, Result};
use crate::output::write_json;

/// Probes for the equivariance suite.
pub const EQUIVARIANCE_PROBES: usize = 500;

/// Bank file if configured, else the conditioning windows of the trajectory
/// directory, else a freshly simulated benchmark.
pub fn diagnostic_bank(cfg: &RunConfig) -> Result<TransitionBank> {
    if let Some(path) = &cfg.diagnose.bank {
        return Ok(load_bank(path)?);
    }
    let dir = cfg.data_dir();
    let trajs = if dir.is_dir() {
        load_trajectories(&dir)?
    } else {
        generate_in_memory(cfg)?
    };
    let n = cfg.forecast.conditioning.min(trajs[0].len());
    Ok(extract_transitions(&conditioning_windows(&trajs, n)?)?)
}

fn rng(cfg: &RunConfig, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream))
}

/// Runs the selected suites (all five by default) on `bank`.
pub fn run_diagnostics(cfg: &RunConfig, bank: &TransitionBank) -> Result<Vec<DiagnosticReport>> {
    let d = &cfg.diagnose;
    let schedule = match resolve_family(cfg, bank)? {
        PathFamily::GaussianBridge(s) => s,
        PathFamily::RectifiedFlow { .. } => {
            return Err(CliError::Config("diagnostics need the Gaussian-bridge family".into()))
        }
    };
    let selected: Vec<&str> = match &d.only {
        Some(names) => DIAGNOSTIC_NAMES
            .iter()
            .copied()
            .filter(|n| names.iter().any(|m| m == n))
            .collect(),
        None => DIAGNOSTIC_NAMES.to_vec(),
    };
    let mut reports = Vec::new();
    for (stream, name) in selected.into_iter().enumerate() {
        let mut r = rng(cfg, stream as u64);
        let report = match name {
            "truncation" => {
                let mut details = Vec::new();
                for &big_r in d.truncation_r.iter().filter(|&&x| x <= bank.len()) {
                    let rep = check_truncation_bound(bank, &schedule, big_r, d.probes, &mut r)?;
                    details.extend(rep.details);
                }
                for (i, p) in details.iter_mut().enumerate() {
                    p.index = i;
                }
                DiagnosticReport::from_probes("truncation", 1e-10, details)
            }
            "lipschitz" => {
                let n = d.lipschitz_times.max(2);
                let times: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
                let zs: Vec<Vec<f64>> = (0..d.lipschitz_points).map(|_| probe_point(bank, &mut r)).collect();
                check_lipschitz_bound(bank, &schedule, &times, &zs)?
            }
            "duhamel" => check_duhamel(bank, &schedule, &cfg.solver, d.duhamel_probes, &mut r)?,
            "equivariance" => check_equivariance(bank, &schedule, EQUIVARIANCE_PROBES, &mut r)?,
            "cost" => {
                let m = bank.len();
                let sizes: Vec<usize> = [m / 8, m / 4, m / 2, m].into_iter().filter(|&s| s > 0).collect();
                measure_cost(bank, &sizes, &d.cost_r, &schedule)?.report
            }
            other => unreachable!("unknown diagnostic {other}"),
        };
        log::info!(
            "{}: {} probes, max violation {:.3e}, {}",
            report.name,
            report.probes,
            report.max_violation,
            if report.pass { "pass" } else { "FAIL" }
        );
        reports.push(report);
    }
    Ok(reports)
}

#[derive(Debug, Clone)]
pub struct DiagnoseOutput {
    pub dir: PathBuf,
    pub reports: Vec<DiagnosticReport>,
}

impl DiagnoseOutput {
    pub fn failed_units(&self) -> usize {
        self.reports.iter().filter(|r| !r.pass).count()
    }
}

#[derive(Serialize)]
struct ReportFile<'a> {
    bank_hash: String,
    bank_m: usize,
    config: &'a RunConfig,
    report: &'a DiagnosticReport,
}

/// Writes one JSON report per suite under `<out>/diagnose`.
pub fn cmd_diagnose(cfg: &RunConfig) -> Result<DiagnoseOutput> {
    cfg.validate()?;
    let bank = diagnostic_bank(cfg)?;
    let reports = run_diagnostics(cfg, &bank)?;
    let dir = cfg.out.join("diagnose");
    for r in &reports {
        let file = ReportFile {
            bank_hash: bank.content_hash(),
            bank_m: bank.len(),
            config: cfg,
            report: r,
        };
        write_json(&dir.join(format!("{}.json", r.name)), &file)?;
    }
    cfg.echo("config.resolved.json")?;
    Ok(DiagnoseOutput { dir, reports })
}
