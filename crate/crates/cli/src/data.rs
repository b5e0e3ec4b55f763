use std::borrow::Cow;
use std::path::{Path, PathBuf};

use flowcast::bank::{extract_transitions, read_trajectory_csv, Trajectory, TransitionBank};
use flowcast::dynamics::{estimate_lyapunov, generate_benchmark, SamplingPlan, SystemSpec};
use flowcast::{BridgeSchedule, PathFamily};
use serde::{Deserialize, Serialize};

use crate::config::{BankSource, FamilyKind, RunConfig};
use crate::error::{CliError, Result};
use crate::output::read_json;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub system: SystemSpec,
    pub lyapunov_exponent: f64,
    /// False when the exponent came from the config instead of an estimate.
    pub lyapunov_estimated: bool,
    pub lyapunov_converged: Option<bool>,
    pub plan: SamplingPlan,
    pub dt: f64,
    pub dt_internal: f64,
    /// Max deviation over one Lyapunov time between RK4 at `dt_internal`
    /// and at `dt_internal / 2` from the first trajectory's initial state.
    pub rk4_step_doubling_deviation: f64,
    pub seed: u64,
    pub trajectories: Vec<ManifestEntry>,
    pub config: RunConfig,
}

pub fn resolve_spec(cfg: &RunConfig) -> Result<SystemSpec> {
    Ok(SystemSpec::new(cfg.data.system).with_overrides(&cfg.data.params)?)
}

/// Exponent from the config, or a tangent-method estimate from the
/// system's reference state.
pub fn resolve_lyapunov(cfg: &RunConfig, spec: &SystemSpec) -> Result<(f64, Option<bool>)> {
    if let Some(l) = cfg.data.lyapunov_exponent {
        return Ok((l, None));
    }
    let est = estimate_lyapunov(spec, &spec.name.reference_state(), cfg.data.lyapunov_horizon, 0.5)?;
    if !est.converged {
        log::warn!(
            "Lyapunov estimate {:.4} not converged (last quarter {:.4})",
            est.exponent,
            est.last_quarter
        );
    }
    if est.exponent <= 0.0 {
        return Err(CliError::Config(format!(
            "estimated Lyapunov exponent {:.4} is not positive; set data.lyapunov_exponent",
            est.exponent
        )));
    }
    Ok((est.exponent, Some(est.converged)))
}

pub fn sampling_plan(cfg: &RunConfig, spec: &SystemSpec, lyapunov: f64) -> SamplingPlan {
    let mut plan = SamplingPlan::standard(spec.name, lyapunov);
    plan.points_per_lyapunov_time = cfg.data.points_per_lyapunov_time;
    plan.n_trajectories = cfg.data.n_trajectories;
    plan.length = cfg.data.length;
    plan.burn_in = cfg.data.burn_in;
    plan.substeps = cfg.data.substeps;
    plan
}

/// Trajectories of the configured benchmark without touching the disk.
pub fn generate_in_memory(cfg: &RunConfig) -> Result<Vec<Trajectory>> {
    let spec = resolve_spec(cfg)?;
    let (lyap, _) = resolve_lyapunov(cfg, &spec)?;
    Ok(generate_benchmark(&spec, &sampling_plan(cfg, &spec, lyap), cfg.seed)?)
}

/// Trajectories listed in the directory's manifest, or every `*.csv` in
/// name order when there is none.
pub fn load_trajectories(dir: &Path) -> Result<Vec<Trajectory>> {
    let manifest = dir.join(MANIFEST_FILE);
    let files: Vec<(String, PathBuf)> = if manifest.exists() {
        let m: Manifest = read_json(&manifest)?;
        m.trajectories
            .into_iter()
            .map(|e| (e.id, dir.join(e.file)))
            .collect()
    } else {
        let mut found: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| CliError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        found.sort();
        found
            .into_iter()
            .map(|p| {
                let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                (id, p)
            })
            .collect()
    };
    if files.is_empty() {
        return Err(flowcast::Error::NoData(format!("no trajectory files in {}", dir.display())).into());
    }
    files
        .into_iter()
        .map(|(id, path)| Ok(read_trajectory_csv(&path, id)?))
        .collect()
}

/// Conditioning windows (first `n` points) of every trajectory.
pub fn conditioning_windows(trajs: &[Trajectory], n: usize) -> Result<Vec<Trajectory>> {
    Ok(trajs.iter().map(|t| t.head(n)).collect::<flowcast::Result<Vec<_>>>()?)
}

/// Bank used to forecast trajectory `i`.
pub fn bank_for<'a>(
    windows: &[Trajectory],
    pooled: &'a TransitionBank,
    source: BankSource,
    i: usize,
) -> Result<Cow<'a, TransitionBank>> {
    match source {
        BankSource::All => Ok(Cow::Borrowed(pooled)),
        BankSource::Own => Ok(Cow::Owned(extract_transitions(std::slice::from_ref(&windows[i]))?)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedParams {
    pub sigma_min: f64,
    pub sigma: f64,
}

/// Path family: explicit bandwidths, then a tuned file, then data-scaled
/// defaults of `bank`.
pub fn resolve_family(cfg: &RunConfig, bank: &TransitionBank) -> Result<PathFamily> {
    let f = &cfg.forecast;
    if f.family == FamilyKind::RectifiedFlow {
        let fam = PathFamily::RectifiedFlow {
            sigma_min_rf: f.sigma_min_rf,
        };
        fam.validate()?;
        return Ok(fam);
    }
    let default = BridgeSchedule::default_for(bank);
    let tuned = match &f.tuned {
        Some(path) => Some(read_json::<crate::gridsearch::GridOutput>(path)?.best),
        None => None,
    };
    let sigma_min = f
        .sigma_min
        .or(tuned.as_ref().map(|t| t.sigma_min))
        .unwrap_or(default.sigma_min());
    let sigma = f
        .sigma
        .or(tuned.as_ref().map(|t| t.sigma))
        .unwrap_or(default.sigma());
    Ok(PathFamily::GaussianBridge(BridgeSchedule::new(sigma_min, sigma)?))
}
