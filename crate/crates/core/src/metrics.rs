//! Forecast evaluation: sMAPE, valid prediction time, CRPS, correlation
//! dimension and histogram KL divergence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_shapes(y: &[Vec<f64>], yhat: &[Vec<f64>]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            found: yhat.len(),
            context: "forecast horizon".into(),
        });
    }
    for (t, (a, b)) in y.iter().zip(yhat).enumerate() {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                found: b.len(),
                context: format!("state dimension at step {t}"),
            });
        }
    }
    Ok(())
}

/// Per-step sMAPE in percent, averaged over state coordinates. A coordinate
/// with `y = yhat = 0` contributes 0.
pub fn smape(y: &[Vec<f64>], yhat: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_shapes(y, yhat)?;
    Ok(y.iter()
        .zip(yhat)
        .map(|(a, b)| {
            let total: f64 = a
                .iter()
                .zip(b)
                .map(|(u, v)| {
                    let denom = (u.abs() + v.abs()) / 2.0;
                    if denom == 0.0 {
                        0.0
                    } else {
                        (u - v).abs() / denom
                    }
                })
                .sum();
            100.0 * total / a.len().max(1) as f64
        })
        .collect())
}

/// Number of leading steps with sMAPE below `epsilon`, in Lyapunov times.
pub fn vpt_from_smape(smape_per_step: &[f64], epsilon: f64, lyapunov_time_points: usize) -> f64 {
    let valid = smape_per_step.iter().take_while(|s| **s < epsilon).count();
    valid as f64 / lyapunov_time_points as f64
}

pub fn vpt(y: &[Vec<f64>], yhat: &[Vec<f64>], epsilon: f64, lyapunov_time_points: usize) -> Result<f64> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Range(format!("epsilon must be positive, got {epsilon}")));
    }
    if lyapunov_time_points == 0 {
        return Err(Error::Range("lyapunov_time_points must be positive".into()));
    }
    Ok(vpt_from_smape(&smape(y, yhat)?, epsilon, lyapunov_time_points))
}

/// `E|X - y| - E|X - X'| / 2` over the empirical sample, all ordered pairs
/// including `i = j`.
pub fn crps(samples: &[f64], y: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let n = samples.len() as f64;
    let first = samples.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    // sum_{i,j} |x_i - x_j| = 2 sum_i (2i - n + 1) x_(i)
    let pair_sum: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * i as f64 - n + 1.0) * x)
        .sum::<f64>()
        * 2.0;
    (first - pair_sum / (2.0 * n * n)).max(0.0)
}

/// Per-step CRPS averaged over coordinates. `samples` is `S x H x d`.
pub fn crps_per_step(samples: &[Vec<Vec<f64>>], truth: &[Vec<f64>]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::NoData("ensemble has no samples".into()));
    }
    for s in samples {
        check_shapes(truth, s)?;
    }
    Ok(truth
        .iter()
        .enumerate()
        .map(|(h, y)| {
            let d = y.len();
            (0..d)
                .map(|k| {
                    let marg: Vec<f64> = samples.iter().map(|s| s[h][k]).collect();
                    crps(&marg, y[k])
                })
                .sum::<f64>()
                / d as f64
        })
        .collect())
}

/// Result of a correlation-dimension fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationFit {
    pub dimension: f64,
    pub radii_used: usize,
    pub radii: Vec<f64>,
    pub correlation_sums: Vec<f64>,
}

/// Default window of correlation-sum values used for the log-log fit.
pub const DEFAULT_FIT_WINDOW: (f64, f64) = (1e-3, 5e-2);

fn pair_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

/// `n` log-spaced radii between the smallest nonzero and the largest pairwise distance.
pub fn log_radius_grid(points: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let r = pair_dist(&points[i], &points[j]);
            if r > 0.0 {
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
    }
    if hi.is_nan() || hi <= 0.0 || n < 2 {
        return Vec::new();
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Grassberger-Procaccia estimate on full state vectors: slope of
/// `ln C(r)` against `ln r` over radii with `C(r)` inside `fit_window`.
/// `C(r)` is the fraction of distinct pairs closer than `r`.
pub fn correlation_dimension(
    points: &[Vec<f64>],
    r_grid: &[f64],
    fit_window: (f64, f64),
) -> Result<CorrelationFit> {
    if points.len() < 100 {
        return Err(Error::Range(format!(
            "correlation dimension needs at least 100 points, got {}",
            points.len()
        )));
    }
    let mut radii: Vec<f64> = r_grid.iter().copied().filter(|r| *r > 0.0).collect();
    radii.sort_by(|a, b| a.total_cmp(b));
    let n = points.len();
    // counts[b] = pairs with radii[b-1] <= dist < radii[b]
    let mut counts = vec![0u64; radii.len() + 1];
    for i in 0..n {
        for j in i + 1..n {
            let r = pair_dist(&points[i], &points[j]);
            let b = radii.partition_point(|x| *x <= r);
            counts[b] += 1;
        }
    }
    let total = (n * (n - 1) / 2) as f64;
    let mut acc = 0u64;
    let sums: Vec<f64> = (0..radii.len())
        .map(|b| {
            acc += counts[b];
            acc as f64 / total
        })
        .collect();

    let (lo, hi) = fit_window;
    let pts: Vec<(f64, f64)> = radii
        .iter()
        .zip(&sums)
        .filter(|(_, c)| **c > 0.0 && **c >= lo && **c <= hi)
        .map(|(r, c)| (r.ln(), c.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientScaling { found: pts.len() });
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Ok(CorrelationFit {
        dimension: sxy / sxx,
        radii_used: pts.len(),
        radii,
        correlation_sums: sums,
    })
}

/// Mean over coordinates of `KL(P || Q)` between Laplace-smoothed marginal
/// histograms on the union range.
pub fn kl_divergence(truth: &[Vec<f64>], pred: &[Vec<f64>], bins_per_dim: usize) -> Result<f64> {
    if truth.is_empty() || pred.is_empty() {
        return Err(Error::NoData("KL divergence needs two nonempty clouds".into()));
    }
    if bins_per_dim == 0 {
        return Err(Error::Range("bins_per_dim must be positive".into()));
    }
    let d = truth[0].len();
    if let Some(bad) = truth.iter().chain(pred).find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: bad.len(),
            context: "KL point cloud".into(),
        });
    }
    let mut total = 0.0;
    for k in 0..d {
        let (lo, hi) = truth
            .iter()
            .chain(pred)
            .map(|p| p[k])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let hist = |cloud: &[Vec<f64>]| -> Vec<f64> {
            let mut c = vec![1.0; bins_per_dim];
            for p in cloud {
                let b = if hi > lo {
                    (((p[k] - lo) / (hi - lo)) * bins_per_dim as f64).floor() as usize
                } else {
                    0
                };
                c[b.min(bins_per_dim - 1)] += 1.0;
            }
            let s: f64 = c.iter().sum();
            c.iter_mut().for_each(|v| *v /= s);
            c
        };
        let p = hist(truth);
        let q = hist(pred);
        total += p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum::<f64>();
    }
    Ok((total / d as f64).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrDimComparison {
    pub predicted: f64,
    pub truth: f64,
    /// Root-mean-square of `predicted - truth` over the compared pairs.
    pub rmse: f64,
}

impl CorrDimComparison {
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Option<Self> {
        if pairs.is_empty() {
            return None;
        }
        let n = pairs.len() as f64;
        Some(Self {
            predicted: pairs.iter().map(|p| p.0).sum::<f64>() / n,
            truth: pairs.iter().map(|p| p.1).sum::<f64>() / n,
            rmse: (pairs.iter().map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n).sqrt(),
        })
    }
}

/// Parameters needed to recompute a [`MetricReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricSettings {
    pub epsilon: f64,
    pub lyapunov_time_points: usize,
    pub smape_reduction: String,
    pub vpt_mode: String,
    pub crps_estimator: String,
    pub corr_dim_fit_window: (f64, f64),
    pub corr_dim_radii: usize,
    pub kl_bins_per_dim: usize,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            epsilon: 20.0,
            lyapunov_time_points: 100,
            smape_reduction: "mean over state coordinates per step".into(),
            vpt_mode: "per-step sMAPE".into(),
            crps_estimator: "all ordered pairs including i = j".into(),
            corr_dim_fit_window: DEFAULT_FIT_WINDOW,
            corr_dim_radii: 40,
            kl_bins_per_dim: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub smape_per_step: Vec<f64>,
    pub vpt: f64,
    pub epsilon: f64,
    pub crps_per_step: Option<Vec<f64>>,
    pub corr_dim: Option<CorrDimComparison>,
    pub kl: Option<f64>,
    pub settings: MetricSettings,
}

impl MetricReport {
    /// sMAPE and VPT of a point forecast, plus CRPS when an ensemble is given.
    pub fn evaluate(
        truth: &[Vec<f64>],
        point: &[Vec<f64>],
        ensemble: Option<&[Vec<Vec<f64>>]>,
        settings: &MetricSettings,
    ) -> Result<Self> {
        let smape_per_step = smape(truth, point)?;
        let vpt = vpt_from_smape(&smape_per_step, settings.epsilon, settings.lyapunov_time_points);
        let crps_per_step = match ensemble {
            Some(s) => Some(crps_per_step(s, truth)?),
            None => None,
        };
        Ok(Self {
            smape_per_step,
            vpt,
            epsilon: settings.epsilon,
            crps_per_step,
            corr_dim: None,
            kl: None,
            settings: settings.clone(),
        })
    }

    /// Mean sMAPE over the first `steps` steps.
    pub fn mean_smape(&self, steps: usize) -> f64 {
        let n = steps.min(self.smape_per_step.len()).max(1);
        self.smape_per_step[..n].iter().sum::<f64>() / n as f64
    }
}
