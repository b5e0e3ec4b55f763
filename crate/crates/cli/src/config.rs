use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use flowcast::dynamics::SystemName;
use flowcast::metrics::MetricSettings;
use flowcast::sampler::{Scheme, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Every knob of every subcommand. A fully defaulted config runs the
/// Lorenz-63 protocol end to end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub forecast: ForecastConfig,
    pub solver: SolverConfig,
    pub metrics: MetricSettings,
    pub gridsearch: GridConfig,
    pub ablate: AblateConfig,
    pub diagnose: DiagnoseConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            forecast: ForecastConfig::default(),
            solver: SolverConfig::default(),
            metrics: MetricSettings::default(),
            gridsearch: GridConfig::default(),
            ablate: AblateConfig::default(),
            diagnose: DiagnoseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub system: SystemName,
    /// Overrides of the system's default parameters.
    pub params: BTreeMap<String, f64>,
    pub n_trajectories: usize,
    pub length: usize,
    pub points_per_lyapunov_time: usize,
    pub burn_in: f64,
    pub substeps: usize,
    /// Known exponent; estimated with the tangent method when absent.
    pub lyapunov_exponent: Option<f64>,
    pub lyapunov_horizon: f64,
    /// Trajectory directory; defaults to `<out>/data`.
    pub dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            system: SystemName::Lorenz63,
            params: BTreeMap::new(),
            n_trajectories: 20,
            length: 812,
            points_per_lyapunov_time: 100,
            burn_in: 50.0,
            substeps: 10,
            lyapunov_exponent: None,
            lyapunov_horizon: 2000.0,
            dir: None,
        }
    }
}

/// Which transitions populate the bank used to forecast a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankSource {
    /// Conditioning windows of every trajectory.
    All,
    /// Only the trajectory's own conditioning window.
    Own,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    GaussianBridge,
    RectifiedFlow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub conditioning: usize,
    pub horizon: usize,
    pub samples: usize,
    pub bank_source: BankSource,
    pub family: FamilyKind,
    /// Bridge bandwidths; data-scaled defaults when absent.
    pub sigma_min: Option<f64>,
    pub sigma: Option<f64>,
    pub sigma_min_rf: f64,
    /// Use the best point of a grid-search output file.
    pub tuned: Option<PathBuf>,
    /// Forecast only the first `n` trajectories; the bank still uses all.
    pub max_trajectories: Option<usize>,
    /// Correlation dimension and KL between forecast and truth.
    pub attractor_stats: bool,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            conditioning: 312,
            horizon: 500,
            samples: 1,
            bank_source: BankSource::All,
            family: FamilyKind::GaussianBridge,
            sigma_min: None,
            sigma: None,
            sigma_min_rf: 0.0,
            tuned: None,
            max_trajectories: None,
            attractor_stats: true,
        }
    }
}

/// What the grid search minimises on held-out transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridObjective {
    /// Euclidean error of the noise-free one-step map.
    OneStepError,
    /// Coordinate-mean CRPS of a sampled one-step ensemble.
    OneStepCrps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Multiples of the bank's mean coordinate scale.
    pub sigma_min_factors: Vec<f64>,
    pub sigma_factors: Vec<f64>,
    /// Absolute values; replace the factor grids when present.
    pub sigma_min_values: Option<Vec<f64>>,
    pub sigma_values: Option<Vec<f64>>,
    pub holdout_fraction: f64,
    pub max_holdout: usize,
    pub objective: GridObjective,
    /// Ensemble size per held-out transition for the CRPS objective.
    pub crps_samples: usize,
    /// Held-out cap for the CRPS objective, which costs an ensemble per item.
    pub crps_max_holdout: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            sigma_min_factors: vec![0.004, 0.008, 0.015, 0.03, 0.06, 0.12],
            sigma_factors: vec![0.015, 0.03, 0.06, 0.12, 0.24],
            sigma_min_values: None,
            sigma_values: None,
            holdout_fraction: 0.1,
            max_holdout: 150,
            objective: GridObjective::OneStepError,
            crps_samples: 8,
            crps_max_holdout: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationCell {
    pub steps: usize,
    pub scheme: Scheme,
    pub top_r: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub steps: Vec<usize>,
    pub schemes: Vec<Scheme>,
    pub truncations: Vec<Option<usize>>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            steps: vec![30, 50, 100],
            schemes: vec![Scheme::ForwardEuler, Scheme::Rk4, Scheme::ExponentialEulerEtd1],
            truncations: vec![None, Some(256)],
        }
    }
}

impl AblateConfig {
    pub fn cells(&self) -> Vec<AblationCell> {
        let mut cells = Vec::new();
        for &steps in &self.steps {
            for &scheme in &self.schemes {
                for &top_r in &self.truncations {
                    cells.push(AblationCell { steps, scheme, top_r });
                }
            }
        }
        cells
    }
}

pub const DIAGNOSTIC_NAMES: [&str; 5] = ["truncation", "lipschitz", "duhamel", "equivariance", "cost"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    /// Bank file; built from the trajectory directory (or a fresh benchmark)
    /// when absent.
    pub bank: Option<PathBuf>,
    pub only: Option<Vec<String>>,
    pub probes: usize,
    pub truncation_r: Vec<usize>,
    pub lipschitz_times: usize,
    pub lipschitz_points: usize,
    pub duhamel_probes: usize,
    pub cost_r: Vec<usize>,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            bank: None,
            only: None,
            probes: 1000,
            truncation_r: vec![1, 16, 256],
            lipschitz_times: 11,
            lipschitz_points: 50,
            duhamel_probes: 3,
            cost_r: vec![16, 256],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data.dir.clone().unwrap_or_else(|| self.out.join("data"))
    }

    pub fn validate(&self) -> Result<()> {
        let f = &self.forecast;
        if f.horizon == 0 {
            return Err(CliError::Config("forecast horizon must be at least 1".into()));
        }
        if f.conditioning < 2 {
            return Err(CliError::Config("conditioning window needs at least 2 points".into()));
        }
        if f.samples == 0 {
            return Err(CliError::Config("ensemble size must be at least 1".into()));
        }
        if let Some(only) = &self.diagnose.only {
            if let Some(bad) = only.iter().find(|n| !DIAGNOSTIC_NAMES.contains(&n.as_str())) {
                return Err(CliError::Config(format!(
                    "unknown diagnostic '{bad}', expected one of {DIAGNOSTIC_NAMES:?}"
                )));
            }
        }
        Ok(())
    }

    /// Writes the resolved config to `<out>/<name>`.
    pub fn echo(&self, name: &str) -> Result<PathBuf> {
        let path = self.out.join(name);
        crate::output::write_json(&path, self)?;
        Ok(path)
    }
}
