//! Closed-form optimal empirical velocity field over a transition bank.
//!
//! For the Gaussian bridge the field is
//!
//! ```text
//! v(t, z) = g(t) z + sum_j alpha_j(t, z) y_j(t),   y_j = (x2_j - x1_j) - g(t) m_j(t)
//! m_j(t)  = (1 - t) x1_j + t x2_j
//! alpha   = softmax_j( -|z - m_j(t)|^2 / (2 c_t^2) )
//! ```
//!
//! The softmax always subtracts the largest logit first, so squared distances
//! far beyond the exponent range of `f64` still produce a proper simplex.
//! Top-R truncation keeps the R largest weights (smallest distances, ties to
//! the lower index) and renormalizes over them.

use nalgebra::DMatrix;

use crate::bank::TransitionBank;
use crate::error::{Error, Result};
use crate::path::{BridgeSchedule, PathFamily};

/// Result of one velocity evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityEval {
    pub v: Vec<f64>,
    /// Weights over `indices`, summing to one.
    pub weights: Option<Vec<f64>>,
    /// Transition indices the weights refer to (ascending); `None` for the dense field.
    pub indices: Option<Vec<usize>>,
    /// Mass of the retained weights before renormalization; 1 for the dense field.
    pub kept_mass: f64,
    pub jacobian: Option<DMatrix<f64>>,
    /// Number of squared distances computed (always `M`).
    pub distance_evals: usize,
    /// Number of terms in the weighted mixture (`M` dense, `R` truncated).
    pub mixture_terms: usize,
}

/// Reusable buffers for the hot evaluation path.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    logits: Vec<f64>,
    order: Vec<usize>,
    weights: Vec<f64>,
}

impl Scratch {
    pub fn new() -> Self {
        Self::default()
    }

    /// Indices and normalized weights of the last evaluation.
    pub fn selection(&self) -> (&[usize], &[f64]) {
        (&self.order, &self.weights)
    }
}

/// A velocity field bound to a bank, a path family and an optional truncation.
#[derive(Debug, Clone, Copy)]
pub struct VelocityField<'a> {
    bank: &'a TransitionBank,
    family: PathFamily,
    top_r: Option<usize>,
}

impl<'a> VelocityField<'a> {
    pub fn new(bank: &'a TransitionBank, family: PathFamily, top_r: Option<usize>) -> Result<Self> {
        family.validate()?;
        if let Some(r) = top_r {
            if r < 1 || r > bank.len() {
                return Err(Error::Range(format!(
                    "top-R truncation needs 1 <= R <= M = {}, got {r}",
                    bank.len()
                )));
            }
        }
        Ok(Self { bank, family, top_r })
    }

    pub fn bank(&self) -> &'a TransitionBank {
        self.bank
    }

    pub fn family(&self) -> &PathFamily {
        &self.family
    }

    pub fn top_r(&self) -> Option<usize> {
        self.top_r
    }

    /// Full evaluation with weights and retained mass.
    pub fn evaluate(&self, t: f64, z: &[f64]) -> Result<VelocityEval> {
        let mut scratch = Scratch::new();
        let mut v = vec![0.0; self.bank.dim()];
        let kept = self.eval_into(t, z, &mut v, &mut scratch, true)?;
        let (weights, indices) = match self.top_r {
            None => (scratch.weights.clone(), None),
            Some(_) => (scratch.weights.clone(), Some(scratch.order.clone())),
        };
        let terms = weights.len();
        Ok(VelocityEval {
            v,
            weights: Some(weights),
            indices,
            kept_mass: kept,
            jacobian: None,
            distance_evals: self.bank.len(),
            mixture_terms: terms,
        })
    }

    /// Writes `v(t, z)` into `out`. Returns the retained mass when
    /// `want_mass` is set (or the field is dense), `NaN` otherwise.
    pub fn eval_into(
        &self,
        t: f64,
        z: &[f64],
        out: &mut [f64],
        scratch: &mut Scratch,
        want_mass: bool,
    ) -> Result<f64> {
        let d = self.bank.dim();
        if z.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: z.len(),
                context: "velocity query point".into(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) || !t.is_finite() {
            return Err(Error::NonFiniteInput(format!("t = {t}, z = {z:?}")));
        }
        match self.family {
            PathFamily::GaussianBridge(s) => {
                if !(0.0..=1.0).contains(&t) {
                    return Err(Error::TimeDomain {
                        t,
                        family: "gaussian_bridge",
                    });
                }
                bridge_logits(self.bank, &s, t, z, &mut scratch.logits);
            }
            PathFamily::RectifiedFlow { sigma_min_rf } => {
                if !(0.0..1.0).contains(&t) {
                    return Err(Error::TimeDomain {
                        t,
                        family: "rectified_flow",
                    });
                }
                rf_logits(self.bank, sigma_min_rf, t, z, &mut scratch.logits);
            }
        }
        let Scratch {
            logits,
            order,
            weights,
        } = scratch;
        let kept = select_and_normalize(logits, self.top_r, order, weights, want_mass);

        out.iter_mut().for_each(|o| *o = 0.0);
        match self.family {
            PathFamily::GaussianBridge(s) => {
                let g = s.g(t);
                for (&j, &a) in scratch.order.iter().zip(&scratch.weights) {
                    if a == 0.0 {
                        continue;
                    }
                    let x1 = self.bank.x1(j);
                    let dx = self.bank.increment(j);
                    for k in 0..d {
                        let m = x1[k] + t * dx[k];
                        out[k] += a * (dx[k] - g * m);
                    }
                }
                for k in 0..d {
                    out[k] += g * z[k];
                }
            }
            PathFamily::RectifiedFlow { sigma_min_rf } => {
                let sig_t = 1.0 - (1.0 - sigma_min_rf) * t;
                for (&j, &a) in scratch.order.iter().zip(&scratch.weights) {
                    if a == 0.0 {
                        continue;
                    }
                    let x2 = self.bank.x2(j);
                    for k in 0..d {
                        out[k] += a * (x2[k] - (1.0 - sigma_min_rf) * z[k]) / sig_t;
                    }
                }
            }
        }
        Ok(kept)
    }
}

/// `-|z - m_j(t)|^2 / (2 c_t^2)` for every stored transition.
fn bridge_logits(bank: &TransitionBank, s: &BridgeSchedule, t: f64, z: &[f64], out: &mut Vec<f64>) {
    let d = bank.dim();
    let inv = 1.0 / (2.0 * s.c2(t));
    out.clear();
    out.extend(
        bank.x1_flat()
            .chunks_exact(d)
            .zip(bank.increments_flat().chunks_exact(d))
            .map(|(x1, dx)| {
                let mut d2 = 0.0;
                for k in 0..d {
                    let e = z[k] - (x1[k] + t * dx[k]);
                    d2 += e * e;
                }
                -d2 * inv
            }),
    );
}

fn rf_logits(bank: &TransitionBank, sigma_min_rf: f64, t: f64, z: &[f64], out: &mut Vec<f64>) {
    let d = bank.dim();
    let sig_t = 1.0 - (1.0 - sigma_min_rf) * t;
    let inv = 1.0 / (2.0 * sig_t * sig_t);
    out.clear();
    out.extend(bank.x2_flat().chunks_exact(d).map(|x2| {
        let mut d2 = 0.0;
        for k in 0..d {
            let e = z[k] - t * x2[k];
            d2 += e * e;
        }
        -d2 * inv
    }));
}

/// Picks the index set, fills `scratch.order` (ascending) and
/// `scratch.weights` (normalized over the set). Returns the retained mass.
/// Max-shifted logits below this contribute less than `M e^-50` relative to
/// the normalizer, which is below double precision for any practical `M`.
pub const LOGIT_CUTOFF: f64 = -50.0;

/// `exp(x)` for `x <= 0`, flushing terms past [`LOGIT_CUTOFF`] to zero.
#[inline]
fn shifted_exp(x: f64) -> f64 {
    if x < LOGIT_CUTOFF {
        0.0
    } else {
        x.exp()
    }
}

fn select_and_normalize(
    logits: &[f64],
    top_r: Option<usize>,
    order: &mut Vec<usize>,
    weights: &mut Vec<f64>,
    want_mass: bool,
) -> f64 {
    let m = logits.len();
    order.clear();
    match top_r {
        Some(r) if r < m => {
            order.extend(0..m);
            // larger logit first, lower index on ties
            order.select_nth_unstable_by(r - 1, |&a, &b| {
                logits[b]
                    .partial_cmp(&logits[a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            order.truncate(r);
            order.sort_unstable();
        }
        _ => order.extend(0..m),
    }

    let max = order
        .iter()
        .map(|&j| logits[j])
        .fold(f64::NEG_INFINITY, f64::max);

    weights.clear();
    if max == f64::NEG_INFINITY {
        // every logit underflowed to -inf: uniform over the set
        let w = 1.0 / order.len() as f64;
        weights.resize(order.len(), w);
        return if top_r.is_some() {
            order.len() as f64 / m as f64
        } else {
            1.0
        };
    }

    weights
        .extend(order.iter().map(|&j| shifted_exp(logits[j] - max)));
    let kept_sum: f64 = weights.iter().sum();
    let inv = 1.0 / kept_sum;
    weights.iter_mut().for_each(|w| *w *= inv);

    match top_r {
        None => 1.0,
        Some(_) if !want_mass => f64::NAN,
        Some(_) => {
            let total: f64 = logits.iter().map(|&l| shifted_exp(l - max)).sum();
            (kept_sum / total).min(1.0)
        }
    }
}

/// Bridge mean `m_j(t) = (1 - t) x1_j + t x2_j`.
pub fn bridge_mean(j: usize, t: f64, bank: &TransitionBank) -> Result<Vec<f64>> {
    if j >= bank.len() {
        return Err(Error::Index {
            index: j,
            len: bank.len(),
        });
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Range(format!("bridge time must lie in [0, 1], got {t}")));
    }
    Ok(bank
        .x1(j)
        .iter()
        .zip(bank.x2(j))
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect())
}

/// Responsibilities `alpha_j(t, z)` for all `M` transitions.
pub fn responsibilities(
    t: f64,
    z: &[f64],
    bank: &TransitionBank,
    schedule: &BridgeSchedule,
) -> Result<Vec<f64>> {
    let field = VelocityField::new(bank, PathFamily::GaussianBridge(*schedule), None)?;
    let mut scratch = Scratch::new();
    let mut v = vec![0.0; bank.dim()];
    field.eval_into(t, z, &mut v, &mut scratch, false)?;
    Ok(scratch.weights)
}

pub fn velocity_dense(
    t: f64,
    z: &[f64],
    bank: &TransitionBank,
    family: &PathFamily,
) -> Result<VelocityEval> {
    VelocityField::new(bank, *family, None)?.evaluate(t, z)
}

/// Top-R truncated field; `kept_mass` is the retained weight before renormalization.
pub fn velocity_top_r(
    t: f64,
    z: &[f64],
    bank: &TransitionBank,
    family: &PathFamily,
    r: usize,
) -> Result<VelocityEval> {
    VelocityField::new(bank, *family, Some(r))?.evaluate(t, z)
}

/// Forcing labels `y_j(t) = (x2_j - x1_j) - g(t) m_j(t)`, row-major.
pub fn forcing_labels(t: f64, bank: &TransitionBank, schedule: &BridgeSchedule) -> Vec<f64> {
    let g = schedule.g(t);
    bank.x1_flat()
        .iter()
        .zip(bank.increments_flat())
        .map(|(x1, dx)| dx - g * (x1 + t * dx))
        .collect()
}

/// Analytic Jacobian `g(t) I + c_t^{-2} sum_j alpha_j y_j (m_j - m_bar)^T`.
pub fn velocity_jacobian(
    t: f64,
    z: &[f64],
    bank: &TransitionBank,
    family: &PathFamily,
) -> Result<DMatrix<f64>> {
    let schedule = match family {
        PathFamily::GaussianBridge(s) => s,
        PathFamily::RectifiedFlow { .. } => return Err(Error::UnsupportedFamily("rectified_flow")),
    };
    Ok(forcing_jacobian(t, z, bank, schedule)? + DMatrix::identity(bank.dim(), bank.dim()) * schedule.g(t))
}

/// Jacobian of the forcing term `h` alone.
pub fn forcing_jacobian(
    t: f64,
    z: &[f64],
    bank: &TransitionBank,
    schedule: &BridgeSchedule,
) -> Result<DMatrix<f64>> {
    let d = bank.dim();
    let alpha = responsibilities(t, z, bank, schedule)?;
    let g = schedule.g(t);
    let mut m_bar = vec![0.0; d];
    for (j, a) in alpha.iter().enumerate() {
        let x1 = bank.x1(j);
        let dx = bank.increment(j);
        for k in 0..d {
            m_bar[k] += a * (x1[k] + t * dx[k]);
        }
    }
    let inv_c2 = 1.0 / schedule.c2(t);
    let mut jac = DMatrix::<f64>::zeros(d, d);
    for (j, a) in alpha.iter().enumerate() {
        if *a == 0.0 {
            continue;
        }
        let x1 = bank.x1(j);
        let dx = bank.increment(j);
        for r in 0..d {
            let y = dx[r] - g * (x1[r] + t * dx[r]);
            for c in 0..d {
                let m = x1[c] + t * dx[c];
                jac[(r, c)] += a * y * (m - m_bar[c]) * inv_c2;
            }
        }
    }
    Ok(jac)
}

/// Score of the empirical marginal: `sum_j alpha_j (m_j - z) / c_t^2`.
pub fn score(
    t: f64,
    z: &[f64],
    bank: &TransitionBank,
    schedule: &BridgeSchedule,
) -> Result<Vec<f64>> {
    let d = bank.dim();
    let alpha = responsibilities(t, z, bank, schedule)?;
    let inv_c2 = 1.0 / schedule.c2(t);
    let mut s = vec![0.0; d];
    for (j, a) in alpha.iter().enumerate() {
        let x1 = bank.x1(j);
        let dx = bank.increment(j);
        for k in 0..d {
            s[k] += a * (x1[k] + t * dx[k] - z[k]);
        }
    }
    s.iter_mut().for_each(|v| *v *= inv_c2);
    Ok(s)
}
