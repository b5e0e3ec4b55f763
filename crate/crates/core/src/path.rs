//! Conditional probability paths and their scalar schedules.

use serde::{Deserialize, Serialize};

use crate::bank::TransitionBank;
use crate::error::{Error, Result};

/// Variance schedule of the Gaussian bridge `Z_t = (1-t) x1 + t x2 + c_t xi`
/// with `c_t^2 = sigma_min^2 + sigma^2 t (1-t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BridgeSchedule {
    sigma_min: f64,
    sigma: f64,
}

impl BridgeSchedule {
    pub fn new(sigma_min: f64, sigma: f64) -> Result<Self> {
        if !(sigma_min.is_finite() && sigma_min > 0.0) {
            return Err(Error::Config(format!(
                "sigma_min must be positive and finite, got {sigma_min}"
            )));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Config(format!(
                "sigma must be nonnegative and finite, got {sigma}"
            )));
        }
        Ok(Self { sigma_min, sigma })
    }

    /// Data-scaled defaults: `sigma_min = 0.02 s`, `sigma = 0.1 s` with `s` the
    /// mean nonzero per-coordinate scale of the bank.
    pub fn default_for(bank: &TransitionBank) -> Self {
        let s = bank.mean_scale();
        Self {
            sigma_min: 0.02 * s,
            sigma: 0.1 * s,
        }
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `c_t^2`.
    pub fn c2(&self, t: f64) -> f64 {
        self.sigma_min * self.sigma_min + self.sigma * self.sigma * t * (1.0 - t)
    }

    pub fn c(&self, t: f64) -> f64 {
        self.c2(t).sqrt()
    }

    /// Coefficient of the linear drift `G_t = g(t) I`.
    pub fn g(&self, t: f64) -> f64 {
        self.sigma * self.sigma * (1.0 - 2.0 * t) / (2.0 * self.c2(t))
    }

    /// Scalar fundamental solution of `z' = g(t) z`: `phi(t, s) = c_t / c_s`.
    pub fn phi(&self, t: f64, s: f64) -> f64 {
        (self.c2(t) / self.c2(s)).sqrt()
    }
}

/// Path family the velocity field is built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathFamily {
    /// Paired transition bridge; the forecasting construction.
    GaussianBridge(BridgeSchedule),
    /// Empirical rectified flow from `N(0, I)` to the stored `x2` endpoints.
    /// With `sigma_min_rf > 0` the regularized path `mu_t = t x`,
    /// `sigma_t = 1 - (1 - sigma_min_rf) t` is used.
    RectifiedFlow { sigma_min_rf: f64 },
}

impl PathFamily {
    pub fn name(&self) -> &'static str {
        match self {
            PathFamily::GaussianBridge(_) => "gaussian_bridge",
            PathFamily::RectifiedFlow { .. } => "rectified_flow",
        }
    }

    pub fn schedule(&self) -> Option<&BridgeSchedule> {
        match self {
            PathFamily::GaussianBridge(s) => Some(s),
            PathFamily::RectifiedFlow { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PathFamily::GaussianBridge(s) => BridgeSchedule::new(s.sigma_min, s.sigma).map(|_| ()),
            PathFamily::RectifiedFlow { sigma_min_rf } => {
                if sigma_min_rf.is_finite() && (0.0..1.0).contains(sigma_min_rf) {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "sigma_min_rf must lie in [0, 1), got {sigma_min_rf}"
                    )))
                }
            }
        }
    }
}

impl From<BridgeSchedule> for PathFamily {
    fn from(s: BridgeSchedule) -> Self {
        PathFamily::GaussianBridge(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_validation() {
        assert!(BridgeSchedule::new(0.0, 1.0).is_err());
        assert!(BridgeSchedule::new(0.1, -1.0).is_err());
        assert!(BridgeSchedule::new(f64::NAN, 1.0).is_err());
        assert!(BridgeSchedule::new(0.1, 0.0).is_ok());
    }

    #[test]
    fn schedule_values() {
        let s = BridgeSchedule::new(0.1, 2.0).unwrap();
        assert_eq!(s.c2(0.0), s.c2(1.0));
        assert!((s.c2(0.5) - (0.01 + 1.0)).abs() < 1e-15);
        assert_eq!(s.g(0.5), 0.0);
        assert!(s.g(0.1) > 0.0 && s.g(0.9) < 0.0);
        assert!((s.phi(1.0, 0.0) - 1.0).abs() < 1e-15);
        let expected = (1.0f64 + 4.0 / (4.0 * 0.01)).sqrt();
        assert!((s.phi(0.5, 0.0) - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn g_is_half_log_derivative_of_c2() {
        let s = BridgeSchedule::new(0.05, 1.3).unwrap();
        for &t in &[0.1, 0.3, 0.77] {
            let h = 1e-6;
            let fd = (s.c2(t + h).ln() - s.c2(t - h).ln()) / (4.0 * h);
            assert!((fd - s.g(t)).abs() < 1e-6 * (1.0 + s.g(t).abs()));
        }
    }
}
