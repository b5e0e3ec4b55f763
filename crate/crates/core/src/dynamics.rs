//! Benchmark chaotic systems, fixed-step RK4 integration, Benettin Lyapunov
//! estimation and Lyapunov-time-normalized trajectory generation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::Trajectory;
use crate::error::{Error, Result};
use crate::sampler::derive_seed;

/// States with a norm beyond this are treated as divergent.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// Autonomous ODE `x' = f(x)` with a tangent map.
pub trait DynamicalSystem: Sync {
    fn dim(&self) -> usize;
    fn rhs(&self, x: &[f64], out: &mut [f64]);
    /// Jacobian-vector product `Df(x) v`.
    fn tangent(&self, x: &[f64], v: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemName {
    Lorenz63,
    Rossler,
    Aizawa,
    HenonHeiles,
}

impl SystemName {
    pub fn dim(&self) -> usize {
        match self {
            SystemName::HenonHeiles => 4,
            _ => 3,
        }
    }

    pub fn default_params(&self) -> BTreeMap<String, f64> {
        let pairs: &[(&str, f64)] = match self {
            SystemName::Lorenz63 => &[("sigma", 10.0), ("rho", 28.0), ("beta", 8.0 / 3.0)],
            SystemName::Rossler => &[("a", 0.2), ("b", 0.2), ("c", 5.7)],
            SystemName::Aizawa => &[
                ("a", 0.95),
                ("b", 0.7),
                ("c", 0.6),
                ("d", 3.5),
                ("e", 0.25),
                ("f", 0.1),
            ],
            // energy only shapes initial conditions
            SystemName::HenonHeiles => &[("energy", 0.125)],
        };
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    /// Box initial conditions are drawn from before burn-in.
    pub fn default_initial_box(&self) -> Vec<(f64, f64)> {
        match self {
            SystemName::Lorenz63 => vec![(-15.0, 15.0), (-20.0, 20.0), (5.0, 40.0)],
            SystemName::Rossler => vec![(-10.0, 10.0), (-10.0, 10.0), (0.0, 1.0)],
            SystemName::Aizawa => vec![(-1.0, 1.0), (-1.0, 1.0), (-0.5, 1.5)],
            SystemName::HenonHeiles => vec![(-0.3, 0.3), (-0.3, 0.3), (0.0, 0.0), (-0.3, 0.3)],
        }
    }

    /// Reference starting point for Lyapunov estimation.
    pub fn reference_state(&self) -> Vec<f64> {
        match self {
            SystemName::Lorenz63 => vec![1.0, 1.0, 1.0],
            SystemName::Rossler => vec![1.0, 1.0, 0.0],
            SystemName::Aizawa => vec![0.1, 0.0, 0.0],
            SystemName::HenonHeiles => henon_heiles_state_at_energy(0.0, -0.1, 0.0, 0.125)
                .expect("reference point lies inside the energy shell"),
        }
    }
}

impl std::str::FromStr for SystemName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "lorenz" | "lorenz63" => Ok(SystemName::Lorenz63),
            "rossler" | "rössler" => Ok(SystemName::Rossler),
            "aizawa" => Ok(SystemName::Aizawa),
            "henonheiles" | "hénonheiles" => Ok(SystemName::HenonHeiles),
            other => Err(Error::Config(format!("unknown system '{other}'"))),
        }
    }
}

/// A named system with resolved parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub name: SystemName,
    pub params: BTreeMap<String, f64>,
}

impl SystemSpec {
    pub fn new(name: SystemName) -> Self {
        Self {
            name,
            params: name.default_params(),
        }
    }

    /// Overrides known parameters; unknown names and non-finite values are rejected.
    pub fn with_overrides(mut self, overrides: &BTreeMap<String, f64>) -> Result<Self> {
        for (k, v) in overrides {
            if !self.params.contains_key(k) {
                return Err(Error::Config(format!(
                    "system {:?} has no parameter '{k}'",
                    self.name
                )));
            }
            if !v.is_finite() {
                return Err(Error::Config(format!("parameter '{k}' must be finite")));
            }
            self.params.insert(k.clone(), *v);
        }
        Ok(self)
    }

    fn p(&self, k: &str) -> f64 {
        self.params[k]
    }

    /// Draws an initial condition from `bounds`. Hénon-Heiles draws `(x, y, py)`
    /// and solves for `px >= 0` on the configured energy shell.
    pub fn sample_initial<R: Rng + ?Sized>(&self, bounds: &[(f64, f64)], rng: &mut R) -> Result<Vec<f64>> {
        if bounds.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: bounds.len(),
                context: "initial condition box".into(),
            });
        }
        let mut draw = |(lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
        match self.name {
            SystemName::HenonHeiles => {
                let energy = self.p("energy");
                for _ in 0..10_000 {
                    let x = draw(bounds[0]);
                    let y = draw(bounds[1]);
                    let py = draw(bounds[3]);
                    if let Some(s) = henon_heiles_state_at_energy(x, y, py, energy) {
                        return Ok(s);
                    }
                }
                Err(Error::Config(format!(
                    "initial box does not intersect the energy shell E = {energy}"
                )))
            }
            _ => Ok(bounds.iter().map(|b| draw(*b)).collect()),
        }
    }
}

impl DynamicalSystem for SystemSpec {
    fn dim(&self) -> usize {
        self.name.dim()
    }

    fn rhs(&self, s: &[f64], out: &mut [f64]) {
        match self.name {
            SystemName::Lorenz63 => {
                let (sigma, rho, beta) = (self.p("sigma"), self.p("rho"), self.p("beta"));
                out[0] = sigma * (s[1] - s[0]);
                out[1] = s[0] * (rho - s[2]) - s[1];
                out[2] = s[0] * s[1] - beta * s[2];
            }
            SystemName::Rossler => {
                let (a, b, c) = (self.p("a"), self.p("b"), self.p("c"));
                out[0] = -s[1] - s[2];
                out[1] = s[0] + a * s[1];
                out[2] = b + s[2] * (s[0] - c);
            }
            SystemName::Aizawa => {
                let (a, b, c) = (self.p("a"), self.p("b"), self.p("c"));
                let (d, e, f) = (self.p("d"), self.p("e"), self.p("f"));
                let (x, y, z) = (s[0], s[1], s[2]);
                out[0] = (z - b) * x - d * y;
                out[1] = d * x + (z - b) * y;
                out[2] = c + a * z - z * z * z / 3.0 - (x * x + y * y) * (1.0 + e * z) + f * z * x * x * x;
            }
            SystemName::HenonHeiles => {
                let (x, y) = (s[0], s[1]);
                out[0] = s[2];
                out[1] = s[3];
                out[2] = -x - 2.0 * x * y;
                out[3] = -y - x * x + y * y;
            }
        }
    }

    fn tangent(&self, s: &[f64], v: &[f64], out: &mut [f64]) {
        match self.name {
            SystemName::Lorenz63 => {
                let (sigma, rho, beta) = (self.p("sigma"), self.p("rho"), self.p("beta"));
                out[0] = sigma * (v[1] - v[0]);
                out[1] = (rho - s[2]) * v[0] - v[1] - s[0] * v[2];
                out[2] = s[1] * v[0] + s[0] * v[1] - beta * v[2];
            }
            SystemName::Rossler => {
                let (a, c) = (self.p("a"), self.p("c"));
                out[0] = -v[1] - v[2];
                out[1] = v[0] + a * v[1];
                out[2] = s[2] * v[0] + (s[0] - c) * v[2];
            }
            SystemName::Aizawa => {
                let (a, b, d) = (self.p("a"), self.p("b"), self.p("d"));
                let (e, f) = (self.p("e"), self.p("f"));
                let (x, y, z) = (s[0], s[1], s[2]);
                let w = z - b;
                out[0] = w * v[0] - d * v[1] + x * v[2];
                out[1] = d * v[0] + w * v[1] + y * v[2];
                let dzx = -2.0 * x * (1.0 + e * z) + 3.0 * f * z * x * x;
                let dzy = -2.0 * y * (1.0 + e * z);
                let dzz = a - z * z - e * (x * x + y * y) + f * x * x * x;
                out[2] = dzx * v[0] + dzy * v[1] + dzz * v[2];
            }
            SystemName::HenonHeiles => {
                let (x, y) = (s[0], s[1]);
                out[0] = v[2];
                out[1] = v[3];
                out[2] = (-1.0 - 2.0 * y) * v[0] - 2.0 * x * v[1];
                out[3] = -2.0 * x * v[0] + (-1.0 + 2.0 * y) * v[1];
            }
        }
    }
}

/// Hénon-Heiles Hamiltonian `(px^2 + py^2)/2 + (x^2 + y^2)/2 + x^2 y - y^3/3`.
pub fn henon_heiles_energy(s: &[f64]) -> f64 {
    let (x, y, px, py) = (s[0], s[1], s[2], s[3]);
    0.5 * (px * px + py * py) + 0.5 * (x * x + y * y) + x * x * y - y * y * y / 3.0
}

/// State `(x, y, px, py)` with `px >= 0` chosen so the energy equals `energy`.
pub fn henon_heiles_state_at_energy(x: f64, y: f64, py: f64, energy: f64) -> Option<Vec<f64>> {
    let potential = 0.5 * (x * x + y * y) + x * x * y - y * y * y / 3.0;
    let px2 = 2.0 * (energy - potential) - py * py;
    (px2 >= 0.0).then(|| vec![x, y, px2.sqrt(), py])
}

fn rk4_step<S: DynamicalSystem + ?Sized>(sys: &S, x: &mut [f64], dt: f64, buf: &mut [Vec<f64>; 5]) {
    let n = x.len();
    let [k1, k2, k3, k4, tmp] = buf;
    sys.rhs(x, k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    sys.rhs(tmp, k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    sys.rhs(tmp, k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    sys.rhs(tmp, k4);
    for i in 0..n {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

fn rk4_buffers(n: usize) -> [Vec<f64>; 5] {
    std::array::from_fn(|_| vec![0.0; n])
}

fn check_divergence(x: &[f64], t: f64) -> Result<()> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || norm > DIVERGENCE_NORM {
        return Err(Error::DivergedTrajectory { t, norm });
    }
    Ok(())
}

/// Advances `x` by `steps` RK4 steps of size `dt` in place.
pub fn advance<S: DynamicalSystem + ?Sized>(sys: &S, x: &mut [f64], dt: f64, steps: usize) -> Result<()> {
    let mut buf = rk4_buffers(x.len());
    for i in 0..steps {
        rk4_step(sys, x, dt, &mut buf);
        check_divergence(x, (i + 1) as f64 * dt)?;
    }
    Ok(())
}

/// Fixed-step RK4 trajectory recording every internal step.
pub fn integrate_system<S: DynamicalSystem + ?Sized>(
    sys: &S,
    x0: &[f64],
    total_time: f64,
    dt_internal: f64,
) -> Result<Trajectory> {
    if !(dt_internal.is_finite() && dt_internal > 0.0) {
        return Err(Error::Config(format!("dt_internal must be positive, got {dt_internal}")));
    }
    if x0.len() != sys.dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim(),
            found: x0.len(),
            context: "initial state".into(),
        });
    }
    let steps = (total_time / dt_internal).round().max(0.0) as usize;
    sample_trajectory(sys, x0, steps + 1, dt_internal, 1, "integrated")
}

/// `n_points` states spaced `dt_out` apart, each reached by `substeps` RK4 steps.
pub fn sample_trajectory<S: DynamicalSystem + ?Sized>(
    sys: &S,
    x0: &[f64],
    n_points: usize,
    dt_out: f64,
    substeps: usize,
    id: &str,
) -> Result<Trajectory> {
    let h = dt_out / substeps as f64;
    let mut x = x0.to_vec();
    let mut buf = rk4_buffers(x.len());
    let mut states = Vec::with_capacity(n_points);
    states.push(x.clone());
    for i in 1..n_points {
        for _ in 0..substeps {
            rk4_step(sys, &mut x, h, &mut buf);
        }
        check_divergence(&x, i as f64 * dt_out)?;
        states.push(x.clone());
    }
    Trajectory::new(id, dt_out, states)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub exponent: f64,
    /// Last-quarter running average within 5% of the full average.
    pub converged: bool,
    pub last_quarter: f64,
    pub renormalizations: usize,
}

/// Largest Lyapunov exponent by tangent-vector renormalization.
pub fn estimate_lyapunov<S: DynamicalSystem + ?Sized>(
    sys: &S,
    x0: &[f64],
    time_horizon: f64,
    renorm_interval: f64,
) -> Result<LyapunovEstimate> {
    if !(renorm_interval > 0.0 && time_horizon >= renorm_interval) {
        return Err(Error::Config(format!(
            "need 0 < renorm_interval <= time_horizon, got {renorm_interval} and {time_horizon}"
        )));
    }
    let n = sys.dim();
    let sub = (renorm_interval / 0.01).ceil().max(1.0) as usize;
    let h = renorm_interval / sub as f64;
    let intervals = (time_horizon / renorm_interval).floor() as usize;

    // joint state (x, v) in R^{2n}
    struct Joint<'a, S: ?Sized>(&'a S);
    impl<S: DynamicalSystem + ?Sized> DynamicalSystem for Joint<'_, S> {
        fn dim(&self) -> usize {
            2 * self.0.dim()
        }
        fn rhs(&self, s: &[f64], out: &mut [f64]) {
            let n = self.0.dim();
            let (x, v) = s.split_at(n);
            let (ox, ov) = out.split_at_mut(n);
            self.0.rhs(x, ox);
            self.0.tangent(x, v, ov);
        }
        fn tangent(&self, _: &[f64], _: &[f64], _: &mut [f64]) {
            unreachable!("joint system has no tangent")
        }
    }
    let joint = Joint(sys);

    let mut s = x0.to_vec();
    let init = 1.0 / (n as f64).sqrt();
    s.extend(std::iter::repeat_n(init, n));
    let mut buf = rk4_buffers(2 * n);
    let mut logs = Vec::with_capacity(intervals);
    for i in 0..intervals {
        for _ in 0..sub {
            rk4_step(&joint, &mut s, h, &mut buf);
        }
        check_divergence(&s[..n], (i + 1) as f64 * renorm_interval)?;
        let norm = s[n..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::DivergedTrajectory {
                t: (i + 1) as f64 * renorm_interval,
                norm,
            });
        }
        logs.push(norm.ln());
        s[n..].iter_mut().for_each(|v| *v /= norm);
    }
    let exponent = logs.iter().sum::<f64>() / (intervals as f64 * renorm_interval);
    let q = (intervals / 4).max(1);
    let last_quarter = logs[intervals - q..].iter().sum::<f64>() / (q as f64 * renorm_interval);
    let converged = (last_quarter - exponent).abs() < 0.05 * exponent.abs();
    Ok(LyapunovEstimate {
        exponent,
        converged,
        last_quarter,
        renormalizations: intervals,
    })
}

/// Sampling protocol in Lyapunov-time units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub lyapunov_exponent: f64,
    pub points_per_lyapunov_time: usize,
    pub n_trajectories: usize,
    pub length: usize,
    pub burn_in: f64,
    pub initial_condition_box: Vec<(f64, f64)>,
    /// RK4 substeps per output sample.
    pub substeps: usize,
}

impl SamplingPlan {
    /// 20 trajectories of 812 points at 100 points per Lyapunov time.
    pub fn standard(name: SystemName, lyapunov_exponent: f64) -> Self {
        Self {
            lyapunov_exponent,
            points_per_lyapunov_time: 100,
            n_trajectories: 20,
            length: 812,
            burn_in: 50.0,
            initial_condition_box: name.default_initial_box(),
            substeps: 10,
        }
    }

    /// Output interval `1 / (lambda * points_per_lyapunov_time)`.
    pub fn dt(&self) -> f64 {
        1.0 / (self.lyapunov_exponent * self.points_per_lyapunov_time as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lyapunov_exponent.is_finite() && self.lyapunov_exponent > 0.0) {
            return Err(Error::Config(format!(
                "Lyapunov exponent must be positive, got {}",
                self.lyapunov_exponent
            )));
        }
        if self.points_per_lyapunov_time == 0 || self.n_trajectories == 0 || self.substeps == 0 {
            return Err(Error::Config(
                "points_per_lyapunov_time, n_trajectories and substeps must be positive".into(),
            ));
        }
        if self.length < 2 {
            return Err(Error::Config("trajectory length must be >= 2".into()));
        }
        if !(self.burn_in.is_finite() && self.burn_in >= 0.0) {
            return Err(Error::Config("burn_in must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Maximum number of initial conditions tried per trajectory.
pub const MAX_DRAWS: usize = 10;

/// `n_trajectories` trajectories of `length` points at `plan.dt()`. Trajectory
/// `i` uses its own RNG seeded from `(seed, i)`.
pub fn generate_benchmark(spec: &SystemSpec, plan: &SamplingPlan, seed: u64) -> Result<Vec<Trajectory>> {
    plan.validate()?;
    let dt = plan.dt();
    let h = dt / plan.substeps as f64;
    let burn_steps = (plan.burn_in / h).round() as usize;
    (0..plan.n_trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let id = format!("traj_{i:03}");
            let mut last_err = None;
            for _ in 0..MAX_DRAWS {
                let mut x = spec.sample_initial(&plan.initial_condition_box, &mut rng)?;
                let attempt = advance(spec, &mut x, h, burn_steps)
                    .and_then(|_| sample_trajectory(spec, &x, plan.length, dt, plan.substeps, &id));
                match attempt {
                    Ok(traj) => return Ok(traj),
                    Err(e @ Error::DivergedTrajectory { .. }) => last_err = Some(e),
                    Err(e) => return Err(e),
                }
            }
            Err(last_err.expect("at least one draw"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay;
    impl DynamicalSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, x: &[f64], out: &mut [f64]) {
            out[0] = -x[0];
        }
        fn tangent(&self, _: &[f64], v: &[f64], out: &mut [f64]) {
            out[0] = -v[0];
        }
    }

    #[test]
    fn linear_decay_exponent() {
        let est = estimate_lyapunov(&Decay, &[1.0], 20.0, 0.5).unwrap();
        assert!((est.exponent + 1.0).abs() < 1e-6, "{est:?}");
        assert!(est.converged);
    }

    #[test]
    fn rk4_matches_exponential() {
        let traj = integrate_system(&Decay, &[1.0], 1.0, 1e-3).unwrap();
        assert_eq!(traj.len(), 1001);
        let last = traj.states.last().unwrap()[0];
        assert!((last - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn zero_time_is_rejected() {
        let spec = SystemSpec::new(SystemName::Lorenz63);
        assert!(matches!(
            integrate_system(&spec, &[1.0, 1.0, 1.0], 0.0, 1e-3),
            Err(Error::InvalidTrajectory { .. })
        ));
    }

    #[test]
    fn divergence_is_detected() {
        struct Blowup;
        impl DynamicalSystem for Blowup {
            fn dim(&self) -> usize {
                1
            }
            fn rhs(&self, x: &[f64], out: &mut [f64]) {
                out[0] = x[0] * x[0];
            }
            fn tangent(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
                out[0] = 2.0 * x[0] * v[0];
            }
        }
        assert!(matches!(
            integrate_system(&Blowup, &[1.0], 2.0, 1e-3),
            Err(Error::DivergedTrajectory { .. })
        ));
    }

    fn fd_tangent_check(spec: &SystemSpec, x: &[f64]) {
        let n = spec.dim();
        let h = 1e-6;
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            let mut an = vec![0.0; n];
            spec.tangent(x, &e, &mut an);
            let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += h;
            xm[k] -= h;
            spec.rhs(&xp, &mut fp);
            spec.rhs(&xm, &mut fm);
            for i in 0..n {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((fd - an[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{:?} d{i}/d{k}", spec.name);
            }
        }
    }

    #[test]
    fn tangent_maps_match_finite_differences() {
        for name in [SystemName::Lorenz63, SystemName::Rossler, SystemName::Aizawa, SystemName::HenonHeiles] {
            let spec = SystemSpec::new(name);
            let x: Vec<f64> = (0..spec.dim()).map(|i| 0.3 + 0.17 * i as f64).collect();
            fd_tangent_check(&spec, &x);
        }
    }

    #[test]
    fn overrides_are_checked() {
        let mut o = BTreeMap::new();
        o.insert("rho".to_string(), 20.0);
        let spec = SystemSpec::new(SystemName::Lorenz63).with_overrides(&o).unwrap();
        assert_eq!(spec.params["rho"], 20.0);
        o.insert("nope".to_string(), 1.0);
        assert!(SystemSpec::new(SystemName::Lorenz63).with_overrides(&o).is_err());
    }

    #[test]
    fn names_parse() {
        assert_eq!("aizawa".parse::<SystemName>().unwrap(), SystemName::Aizawa);
        assert_eq!("Lorenz-63".parse::<SystemName>().unwrap(), SystemName::Lorenz63);
        assert_eq!("henon_heiles".parse::<SystemName>().unwrap(), SystemName::HenonHeiles);
        assert!("duffing".parse::<SystemName>().is_err());
    }

    #[test]
    fn henon_heiles_initial_conditions_sit_on_shell() {
        let spec = SystemSpec::new(SystemName::HenonHeiles);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let s = spec.sample_initial(&SystemName::HenonHeiles.default_initial_box(), &mut rng).unwrap();
            assert!((henon_heiles_energy(&s) - 0.125).abs() < 1e-14);
        }
    }

    #[test]
    fn minimal_benchmark() {
        let spec = SystemSpec::new(SystemName::Aizawa);
        let mut plan = SamplingPlan::standard(SystemName::Aizawa, 0.1);
        plan.n_trajectories = 1;
        plan.length = 2;
        plan.burn_in = 1.0;
        let trajs = generate_benchmark(&spec, &plan, 0).unwrap();
        assert_eq!(trajs.len(), 1);
        assert_eq!(trajs[0].len(), 2);
        let prod = trajs[0].dt * plan.lyapunov_exponent * plan.points_per_lyapunov_time as f64;
        assert!((prod - 1.0).abs() <= 2.0 * f64::EPSILON);
    }
}
