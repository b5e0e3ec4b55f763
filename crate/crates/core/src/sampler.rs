//! ODE/SDE samplers over the memory-bank velocity field.
//!
//! One forecast step draws `Z_0 ~ N(x_tau, sigma_min^2 I)`, integrates
//! `dZ/dt = v(t, Z)` over the uniform grid `t_l = l / L` and returns `Z_L`.
//! Multi-step rollouts feed each output back in as the next `x_tau`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::TransitionBank;
use crate::error::{Error, Result};
use crate::path::{BridgeSchedule, PathFamily};
use crate::velocity::{Scratch, VelocityField};

/// Time-stepping scheme for one forecast step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ForwardEuler,
    Rk4,
    /// `Z <- phi(t+dt, t) (Z + dt h(t, Z))`
    IntegratingFactor,
    /// `Z <- e^{g dt} Z + (e^{g dt} - 1)/g h(t, Z)`
    ExponentialEulerEtd1,
    /// Euler-Maruyama with drift `v` and constant isotropic diffusion.
    EulerMaruyamaSde,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::ForwardEuler,
        Scheme::Rk4,
        Scheme::IntegratingFactor,
        Scheme::ExponentialEulerEtd1,
        Scheme::EulerMaruyamaSde,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::ForwardEuler => "forward_euler",
            Scheme::Rk4 => "rk4",
            Scheme::IntegratingFactor => "integrating_factor",
            Scheme::ExponentialEulerEtd1 => "exponential_euler_etd1",
            Scheme::EulerMaruyamaSde => "euler_maruyama_sde",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "euler" | "forward_euler" => Ok(Scheme::ForwardEuler),
            "rk4" | "runge_kutta" => Ok(Scheme::Rk4),
            "if" | "integrating_factor" => Ok(Scheme::IntegratingFactor),
            "etd1" | "exponential_euler" | "exponential_euler_etd1" => {
                Ok(Scheme::ExponentialEulerEtd1)
            }
            "sde" | "euler_maruyama" | "euler_maruyama_sde" => Ok(Scheme::EulerMaruyamaSde),
            other => Err(Error::Config(format!("unknown scheme '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub scheme: Scheme,
    /// Number of uniform steps `L` on `[0, 1]`.
    pub steps: usize,
    /// Constant diffusion magnitude for the SDE scheme.
    pub sde_diffusion: f64,
    pub top_r: Option<usize>,
    pub seed: u64,
    /// Draw `Z_0 ~ N(x_tau, sigma_min^2 I)` every forecast step; when false
    /// `Z_0 = x_tau` and the ODE rollout is deterministic.
    pub init_noise: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::ForwardEuler,
            steps: 100,
            sde_diffusion: 0.0,
            top_r: None,
            seed: 0,
            init_noise: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, family: &PathFamily) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config("solver needs at least one step".into()));
        }
        if !(self.sde_diffusion.is_finite() && self.sde_diffusion >= 0.0) {
            return Err(Error::Config(format!(
                "sde_diffusion must be nonnegative, got {}",
                self.sde_diffusion
            )));
        }
        match (family, self.scheme) {
            (
                PathFamily::RectifiedFlow { .. },
                Scheme::IntegratingFactor | Scheme::ExponentialEulerEtd1,
            ) => Err(Error::Config(format!(
                "{} needs the gaussian bridge linear term",
                self.scheme.name()
            ))),
            // the last RK4 stage would evaluate at t = 1
            (PathFamily::RectifiedFlow { .. }, Scheme::Rk4) => Err(Error::Config(
                "rk4 evaluates at t = 1 where rectified flow is undefined".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Seed for stream `index` under `master`: `splitmix64(master ^ splitmix64(index + golden))`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// RNG for ensemble member `sample` under `master`.
pub fn sample_rng(master: u64, sample: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, sample as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub sample: usize,
    pub error: String,
}

/// `S` rollouts of `H` steps from a common origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastEnsemble {
    pub origin: Vec<f64>,
    pub horizon: usize,
    /// Successful samples, each `H` states of dimension `d`.
    pub samples: Vec<Vec<Vec<f64>>>,
    /// Sample index of each entry of `samples`.
    pub sample_ids: Vec<usize>,
    pub failures: Vec<SampleFailure>,
    pub config: SolverConfig,
    pub family: PathFamily,
}

impl ForecastEnsemble {
    /// Pointwise mean over successful samples, `H x d`.
    pub fn mean(&self) -> Vec<Vec<f64>> {
        let d = self.origin.len();
        let n = self.samples.len() as f64;
        let mut out = vec![vec![0.0; d]; self.horizon];
        for s in &self.samples {
            for (o, x) in out.iter_mut().zip(s) {
                for k in 0..d {
                    o[k] += x[k];
                }
            }
        }
        out.iter_mut().flatten().for_each(|v| *v /= n);
        out
    }

    /// Values of coordinate `k` at step `h` across samples.
    pub fn marginal(&self, h: usize, k: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[h][k]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayDiagnostics {
    /// Time-accumulated weights `beta_j = sum_l dt alpha_j(t_l, Z_l)`.
    pub beta: Vec<f64>,
    pub beta_sum: f64,
    /// `|Z_1 - phi(1,0) Z_0 - sum_l dt phi(1, t_l) h(t_l, Z_l)|`.
    pub duhamel_residual: f64,
    pub z0: Vec<f64>,
    pub z1: Vec<f64>,
}

struct Workspace {
    scratch: Scratch,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Workspace {
    fn new(d: usize) -> Self {
        Self {
            scratch: Scratch::new(),
            k: [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]],
            tmp: vec![0.0; d],
        }
    }
}

/// Velocity field plus solver settings.
#[derive(Debug, Clone, Copy)]
pub struct Sampler<'a> {
    field: VelocityField<'a>,
    config: SolverConfig,
}

impl<'a> Sampler<'a> {
    pub fn new(bank: &'a TransitionBank, family: PathFamily, config: SolverConfig) -> Result<Self> {
        config.validate(&family)?;
        let field = VelocityField::new(bank, family, config.top_r)?;
        Ok(Self { field, config })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn field(&self) -> &VelocityField<'a> {
        &self.field
    }

    fn dim(&self) -> usize {
        self.field.bank().dim()
    }

    fn check_origin(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
                context: "forecast origin".into(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(format!("origin {x:?}")));
        }
        Ok(())
    }

    /// Initial state for one forecast step.
    pub fn initial_state<R: Rng + ?Sized>(&self, x_tau: &[f64], rng: &mut R) -> Vec<f64> {
        match self.field.family() {
            PathFamily::GaussianBridge(s) => {
                if self.config.init_noise {
                    x_tau
                        .iter()
                        .map(|x| x + s.sigma_min() * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                } else {
                    x_tau.to_vec()
                }
            }
            PathFamily::RectifiedFlow { .. } => (0..x_tau.len())
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect(),
        }
    }

    /// Integrates from `z0` at `t = 0` to `t = 1`.
    pub fn integrate<R: Rng + ?Sized>(
        &self,
        z0: &[f64],
        rng: &mut R,
        forecast_step: usize,
    ) -> Result<Vec<f64>> {
        let mut z = z0.to_vec();
        let mut ws = Workspace::new(z.len());
        let l = self.config.steps;
        let dt = 1.0 / l as f64;
        for step in 0..l {
            let t = step as f64 * dt;
            self.advance(t, dt, &mut z, &mut ws, rng)?;
            if z.iter().any(|v| !v.is_finite()) {
                return Err(self.blowup(forecast_step, step, t));
            }
        }
        Ok(z)
    }

    fn blowup(&self, forecast_step: usize, ode_step: usize, t: f64) -> Error {
        let g_abs = self.field.family().schedule().map_or(0.0, |s| s.g(t).abs());
        Error::NumericalBlowup {
            forecast_step,
            ode_step,
            g_abs,
        }
    }

    fn eval(&self, t: f64, z: &[f64], out: &mut [f64], scratch: &mut Scratch) -> Result<()> {
        self.field.eval_into(t, z, out, scratch, false).map(|_| ())
    }

    fn advance<R: Rng + ?Sized>(
        &self,
        t: f64,
        dt: f64,
        z: &mut [f64],
        ws: &mut Workspace,
        rng: &mut R,
    ) -> Result<()> {
        let d = z.len();
        let Workspace { scratch, k, tmp } = ws;
        match self.config.scheme {
            Scheme::ForwardEuler => {
                self.eval(t, z, &mut k[0], scratch)?;
                for i in 0..d {
                    z[i] += dt * k[0][i];
                }
            }
            Scheme::EulerMaruyamaSde => {
                self.eval(t, z, &mut k[0], scratch)?;
                let amp = self.config.sde_diffusion * dt.sqrt();
                for i in 0..d {
                    let xi: f64 = rng.sample(StandardNormal);
                    z[i] += dt * k[0][i] + amp * xi;
                }
            }
            Scheme::Rk4 => {
                let [k1, k2, k3, k4] = k;
                self.eval(t, z, k1, scratch)?;
                for i in 0..d {
                    tmp[i] = z[i] + 0.5 * dt * k1[i];
                }
                self.eval(t + 0.5 * dt, tmp, k2, scratch)?;
                for i in 0..d {
                    tmp[i] = z[i] + 0.5 * dt * k2[i];
                }
                self.eval(t + 0.5 * dt, tmp, k3, scratch)?;
                for i in 0..d {
                    tmp[i] = z[i] + dt * k3[i];
                }
                self.eval((t + dt).min(1.0), tmp, k4, scratch)?;
                for i in 0..d {
                    z[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
            Scheme::IntegratingFactor | Scheme::ExponentialEulerEtd1 => {
                let s = bridge_schedule(self.field.family())?;
                let g = s.g(t);
                self.eval(t, z, &mut k[0], scratch)?;
                // forcing h = v - g z
                for i in 0..d {
                    k[0][i] -= g * z[i];
                }
                if self.config.scheme == Scheme::IntegratingFactor {
                    let phi = s.phi((t + dt).min(1.0), t);
                    for i in 0..d {
                        z[i] = phi * (z[i] + dt * k[0][i]);
                    }
                } else {
                    let gdt = g * dt;
                    let growth = gdt.exp();
                    let coef = if g.abs() < 1e-12 { dt } else { gdt.exp_m1() / g };
                    for i in 0..d {
                        z[i] = growth * z[i] + coef * k[0][i];
                    }
                }
            }
        }
        Ok(())
    }

    pub fn one_step<R: Rng + ?Sized>(&self, x_tau: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        self.check_origin(x_tau)?;
        let z0 = self.initial_state(x_tau, rng);
        self.integrate(&z0, rng, 0)
    }

    /// `H` chained forecast steps, `H x d`.
    pub fn rollout<R: Rng + ?Sized>(
        &self,
        x_tau: &[f64],
        horizon: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        if horizon < 1 {
            return Err(Error::Range("forecast horizon must be >= 1".into()));
        }
        self.check_origin(x_tau)?;
        let mut out = Vec::with_capacity(horizon);
        let mut x = x_tau.to_vec();
        for h in 0..horizon {
            let z0 = self.initial_state(&x, rng);
            x = self.integrate(&z0, rng, h)?;
            out.push(x.clone());
        }
        Ok(out)
    }

    /// `S` independent rollouts; member `i` uses `sample_rng(config.seed, i)`.
    /// Members run on the current rayon pool and are collected by index.
    pub fn ensemble(&self, x_tau: &[f64], horizon: usize, samples: usize) -> Result<ForecastEnsemble> {
        if samples < 1 {
            return Err(Error::Range("ensemble needs at least one sample".into()));
        }
        if horizon < 1 {
            return Err(Error::Range("forecast horizon must be >= 1".into()));
        }
        self.check_origin(x_tau)?;
        let results: Vec<Result<Vec<Vec<f64>>>> = (0..samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = sample_rng(self.config.seed, i);
                self.rollout(x_tau, horizon, &mut rng)
            })
            .collect();

        let mut ens = ForecastEnsemble {
            origin: x_tau.to_vec(),
            horizon,
            samples: Vec::new(),
            sample_ids: Vec::new(),
            failures: Vec::new(),
            config: self.config,
            family: *self.field.family(),
        };
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(traj) => {
                    ens.samples.push(traj);
                    ens.sample_ids.push(i);
                }
                Err(e) => {
                    log::warn!("ensemble sample {i} failed: {e}");
                    ens.failures.push(SampleFailure {
                        sample: i,
                        error: e.to_string(),
                    });
                }
            }
        }
        if ens.samples.is_empty() {
            return Err(Error::EnsembleFailed(samples));
        }
        Ok(ens)
    }

    /// Integrates one forecast step while accumulating the time-integrated
    /// weights and the Duhamel residual of the stored forcing.
    pub fn replay_diagnostics<R: Rng + ?Sized>(
        &self,
        x_tau: &[f64],
        rng: &mut R,
    ) -> Result<ReplayDiagnostics> {
        self.check_origin(x_tau)?;
        let s = bridge_schedule(self.field.family())?;
        let d = self.dim();
        let m = self.field.bank().len();
        let l = self.config.steps;
        let dt = 1.0 / l as f64;

        let z0 = self.initial_state(x_tau, rng);
        let mut z = z0.clone();
        let mut ws = Workspace::new(d);
        let mut probe = Scratch::new();
        let mut v = vec![0.0; d];
        let mut beta = vec![0.0; m];
        let mut forcing = vec![0.0; d];

        let full = VelocityField::new(self.field.bank(), *self.field.family(), None)?;
        for step in 0..l {
            let t = step as f64 * dt;
            full.eval_into(t, &z, &mut v, &mut probe, false)?;
            let (idx, w) = probe.selection();
            for (&j, &a) in idx.iter().zip(w) {
                beta[j] += dt * a;
            }
            let g = s.g(t);
            let phi = s.phi(1.0, t);
            for k in 0..d {
                forcing[k] += dt * phi * (v[k] - g * z[k]);
            }
            self.advance(t, dt, &mut z, &mut ws, rng)?;
            if z.iter().any(|v| !v.is_finite()) {
                return Err(self.blowup(0, step, t));
            }
        }
        let phi10 = s.phi(1.0, 0.0);
        let residual = (0..d)
            .map(|k| {
                let r = z[k] - phi10 * z0[k] - forcing[k];
                r * r
            })
            .sum::<f64>()
            .sqrt();
        Ok(ReplayDiagnostics {
            beta_sum: beta.iter().sum(),
            beta,
            duhamel_residual: residual,
            z0,
            z1: z,
        })
    }
}

fn bridge_schedule(family: &PathFamily) -> Result<BridgeSchedule> {
    family
        .schedule()
        .copied()
        .ok_or(Error::UnsupportedFamily("rectified_flow"))
}

pub fn one_step<R: Rng + ?Sized>(
    x_tau: &[f64],
    bank: &TransitionBank,
    family: &PathFamily,
    config: &SolverConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Sampler::new(bank, *family, *config)?.one_step(x_tau, rng)
}

pub fn rollout<R: Rng + ?Sized>(
    x_tau: &[f64],
    horizon: usize,
    bank: &TransitionBank,
    family: &PathFamily,
    config: &SolverConfig,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    Sampler::new(bank, *family, *config)?.rollout(x_tau, horizon, rng)
}

pub fn ensemble(
    x_tau: &[f64],
    horizon: usize,
    samples: usize,
    bank: &TransitionBank,
    family: &PathFamily,
    config: &SolverConfig,
) -> Result<ForecastEnsemble> {
    Sampler::new(bank, *family, *config)?.ensemble(x_tau, horizon, samples)
}

pub fn replay_diagnostics<R: Rng + ?Sized>(
    x_tau: &[f64],
    bank: &TransitionBank,
    schedule: &BridgeSchedule,
    config: &SolverConfig,
    rng: &mut R,
) -> Result<ReplayDiagnostics> {
    Sampler::new(bank, PathFamily::GaussianBridge(*schedule), *config)?.replay_diagnostics(x_tau, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{extract_transitions, Trajectory};

    fn single(x1: &[f64], x2: &[f64]) -> TransitionBank {
        extract_transitions(&[Trajectory::new("a", 1.0, vec![x1.to_vec(), x2.to_vec()]).unwrap()])
            .unwrap()
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("euler".parse::<Scheme>().unwrap(), Scheme::ForwardEuler);
        assert_eq!("ETD1".parse::<Scheme>().unwrap(), Scheme::ExponentialEulerEtd1);
        assert!("leapfrog".parse::<Scheme>().is_err());
    }

    #[test]
    fn config_validation() {
        let rf = PathFamily::RectifiedFlow { sigma_min_rf: 0.0 };
        let bad = SolverConfig {
            scheme: Scheme::ExponentialEulerEtd1,
            ..Default::default()
        };
        assert!(bad.validate(&rf).is_err());
        let zero = SolverConfig {
            steps: 0,
            ..Default::default()
        };
        let bridge = PathFamily::GaussianBridge(BridgeSchedule::new(0.1, 0.0).unwrap());
        assert!(zero.validate(&bridge).is_err());
    }

    #[test]
    fn single_transition_replay_every_scheme() {
        let bank = single(&[1.0, -2.0], &[1.5, -1.0]);
        let fam = PathFamily::GaussianBridge(BridgeSchedule::new(0.05, 0.0).unwrap());
        for scheme in Scheme::ALL {
            for steps in [1, 7, 100] {
                let cfg = SolverConfig {
                    scheme,
                    steps,
                    ..Default::default()
                };
                let sampler = Sampler::new(&bank, fam, cfg).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(3);
                let mut probe = rng.clone();
                let out = sampler.one_step(&[0.0, 0.0], &mut rng).unwrap();
                let z0 = sampler.initial_state(&[0.0, 0.0], &mut probe);
                assert!((out[0] - (z0[0] + 0.5)).abs() < 1e-13, "{scheme:?} L={steps}");
                assert!((out[1] - (z0[1] + 1.0)).abs() < 1e-13, "{scheme:?} L={steps}");
            }
        }
    }

    #[test]
    fn deterministic_rollout_repeats_shift() {
        let bank = single(&[0.0], &[0.25]);
        let fam = PathFamily::GaussianBridge(BridgeSchedule::new(1e-9, 0.0).unwrap());
        let cfg = SolverConfig {
            steps: 4,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let traj = rollout(&[1.0], 3, &bank, &fam, &cfg, &mut rng).unwrap();
        for (h, x) in traj.iter().enumerate() {
            assert!((x[0] - (1.0 + 0.25 * (h + 1) as f64)).abs() < 1e-7);
        }
    }

    #[test]
    fn rollout_of_one_equals_one_step() {
        let bank = single(&[0.0, 1.0], &[0.5, 0.5]);
        let fam = PathFamily::GaussianBridge(BridgeSchedule::new(0.1, 0.3).unwrap());
        let cfg = SolverConfig::default();
        let a = rollout(&[0.2, 0.2], 1, &bank, &fam, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = one_step(&[0.2, 0.2], &bank, &fam, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, vec![b]);
        assert!(rollout(&[0.2, 0.2], 0, &bank, &fam, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).is_err());
    }

    #[test]
    fn blowup_is_reported() {
        // enormous g near t = 0 with a single coarse step
        let bank = single(&[0.0], &[1.0]);
        let fam = PathFamily::GaussianBridge(BridgeSchedule::new(1e-160, 1e10).unwrap());
        let cfg = SolverConfig {
            steps: 1,
            init_noise: false,
            ..Default::default()
        };
        let err = one_step(&[1e300], &bank, &fam, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::NumericalBlowup { ode_step: 0, .. }), "{err:?}");
    }

    #[test]
    fn seeds_differ_per_stream() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(5, 7), derive_seed(5, 7));
    }
}
