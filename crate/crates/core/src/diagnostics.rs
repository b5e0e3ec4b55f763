//! Runnable verification suites for the structural identities and bounds of
//! the memory-bank sampler: top-R truncation error, spatial Lipschitz bound,
//! Duhamel representation, kernel equivariance and per-evaluation cost.
//!
//! Every check computes its two sides along independent code paths. Each
//! probe records `lhs` (measured) and `rhs` (allowed); a report passes when
//! `max(lhs - rhs) <= bound + tolerance`.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bank::TransitionBank;
use crate::error::{Error, Result};
use crate::path::{BridgeSchedule, PathFamily};
use crate::sampler::{Sampler, Scheme, SolverConfig};
use crate::velocity::{forcing_jacobian, forcing_labels, responsibilities, velocity_dense, velocity_top_r, VelocityField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub index: usize,
    pub label: String,
    pub t: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

impl ProbeRecord {
    pub fn violation(&self) -> f64 {
        self.lhs - self.rhs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub name: String,
    pub probes: usize,
    pub max_violation: f64,
    pub bound: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub worst_probe: Option<usize>,
    pub details: Vec<ProbeRecord>,
}

impl DiagnosticReport {
    pub fn from_probes(name: &str, tolerance: f64, details: Vec<ProbeRecord>) -> Self {
        let (worst_probe, max_violation) = details
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.violation()))
            .fold((None, f64::NEG_INFINITY), |(wi, wv), (i, v)| {
                // NaN counts as the worst possible violation
                let v = if v.is_nan() { f64::INFINITY } else { v };
                if v > wv {
                    (Some(i), v)
                } else {
                    (wi, wv)
                }
            });
        let bound = 0.0;
        Self {
            name: name.to_string(),
            probes: details.len(),
            max_violation,
            bound,
            tolerance,
            pass: max_violation <= bound + tolerance,
            worst_probe,
            details,
        }
    }
}

/// Probe time: the two endpoints first, then uniform on `[0.05, 0.95]`.
pub fn probe_time<R: Rng + ?Sized>(i: usize, rng: &mut R) -> f64 {
    match i {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random_range(0.05..0.95),
    }
}

/// Uniform point in the bank's bounding box widened by 50%.
pub fn probe_point<R: Rng + ?Sized>(bank: &TransitionBank, rng: &mut R) -> Vec<f64> {
    let (lo, hi) = bank.bounding_box();
    lo.iter()
        .zip(&hi)
        .map(|(a, b)| {
            let w = (b - a).max(1e-12);
            let (a, b) = (a - 0.25 * w, b + 0.25 * w);
            rng.random_range(a..b)
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest singular value by power iteration on `A^T A`.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    if n == 0 {
        return 0.0;
    }
    let ata = a.transpose() * a;
    if ata.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    let mut v = nalgebra::DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..50 {
        let w = &ata * &v;
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / wn;
        if (next - lambda).abs() <= 1e-10 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.max(0.0).sqrt()
}

/// Top-R truncation error against `2 C (1 - kept_mass)`, `C = max_j |y_j(t)|`.
pub fn check_truncation_bound<R: Rng + ?Sized>(
    bank: &TransitionBank,
    schedule: &BridgeSchedule,
    r: usize,
    n_probes: usize,
    rng: &mut R,
) -> Result<DiagnosticReport> {
    let family = PathFamily::GaussianBridge(*schedule);
    if r < 1 || r > bank.len() {
        return Err(Error::Range(format!("R = {r} outside 1..={}", bank.len())));
    }
    let d = bank.dim();
    let mut details = Vec::with_capacity(n_probes);
    for i in 0..n_probes {
        let t = probe_time(i, rng);
        let z = probe_point(bank, rng);
        let dense = velocity_dense(t, &z, bank, &family)?;
        let trunc = velocity_top_r(t, &z, bank, &family, r)?;
        let diff: Vec<f64> = dense.v.iter().zip(&trunc.v).map(|(a, b)| a - b).collect();
        let labels = forcing_labels(t, bank, schedule);
        let c = labels.chunks_exact(d).map(norm).fold(0.0, f64::max);
        details.push(ProbeRecord {
            index: i,
            label: format!("R={r}"),
            t: Some(t),
            lhs: norm(&diff),
            rhs: 2.0 * c * (1.0 - trunc.kept_mass),
        });
    }
    Ok(DiagnosticReport::from_probes("truncation", 1e-10, details))
}

/// `|grad_z h|_op <= 2 R_m (R_1 + |g(t)| R_m) / c_t^2` on every `(t, z)` pair.
pub fn check_lipschitz_bound(
    bank: &TransitionBank,
    schedule: &BridgeSchedule,
    t_grid: &[f64],
    z_probes: &[Vec<f64>],
) -> Result<DiagnosticReport> {
    let r1 = (0..bank.len()).map(|j| norm(bank.increment(j))).fold(0.0, f64::max);
    let rm = t_grid
        .iter()
        .flat_map(|&t| {
            (0..bank.len()).map(move |j| {
                let m: Vec<f64> = bank
                    .x1(j)
                    .iter()
                    .zip(bank.x2(j))
                    .map(|(a, b)| (1.0 - t) * a + t * b)
                    .collect();
                norm(&m)
            })
        })
        .fold(0.0, f64::max);
    let mut details = Vec::with_capacity(t_grid.len() * z_probes.len());
    for &t in t_grid {
        let bound = 2.0 * rm * (r1 + schedule.g(t).abs() * rm) / schedule.c2(t);
        for z in z_probes {
            let jac = forcing_jacobian(t, z, bank, schedule)?;
            details.push(ProbeRecord {
                index: details.len(),
                label: "lipschitz".into(),
                t: Some(t),
                lhs: operator_norm(&jac),
                rhs: bound,
            });
        }
    }
    Ok(DiagnosticReport::from_probes("lipschitz", 0.0, details))
}

/// Acceptance band for the residual ratio between `L` and `2L` Euler steps.
pub const DUHAMEL_RATIO_BAND: (f64, f64) = (1.7, 2.3);

/// Semigroup property of `phi`, first-order decay of the Duhamel residual
/// under forward Euler, and `sum_j beta_j = 1` when `sigma = 0`.
pub fn check_duhamel<R: Rng + ?Sized>(
    bank: &TransitionBank,
    schedule: &BridgeSchedule,
    config: &SolverConfig,
    n_probes: usize,
    rng: &mut R,
) -> Result<DiagnosticReport> {
    let mut details = Vec::new();

    // phi(t, s) phi(s, 0) = phi(t, 0)
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    for &t in &grid {
        for &s in &grid {
            let lhs = schedule.phi(t, s) * schedule.phi(s, 0.0);
            let rhs = schedule.phi(t, 0.0);
            details.push(ProbeRecord {
                index: details.len(),
                label: format!("semigroup s={s}"),
                t: Some(t),
                lhs: (lhs - rhs).abs() / rhs,
                rhs: 1e-14,
            });
        }
    }

    let base = config.steps.max(100);
    let (lo, hi) = DUHAMEL_RATIO_BAND;
    for p in 0..n_probes {
        let j = rng.random_range(0..bank.len());
        let x_tau = bank.x1(j).to_vec();
        let seed: u64 = rng.random();
        let mut residuals = Vec::new();
        for l in [base, 2 * base, 4 * base] {
            let cfg = SolverConfig {
                scheme: Scheme::ForwardEuler,
                steps: l,
                top_r: None,
                ..*config
            };
            let sampler = Sampler::new(bank, PathFamily::GaussianBridge(*schedule), cfg)?;
            let mut r = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            residuals.push(sampler.replay_diagnostics(&x_tau, &mut r)?.duhamel_residual);
        }
        for (k, w) in residuals.windows(2).enumerate() {
            let ratio = w[0] / w[1];
            details.push(ProbeRecord {
                index: details.len(),
                label: format!("euler residual ratio probe {p} L={}->{}", base << k, base << (k + 1)),
                t: None,
                // distance outside the band
                lhs: (lo - ratio).max(ratio - hi),
                rhs: 0.0,
            });
        }

        let flat = BridgeSchedule::new(schedule.sigma_min(), 0.0)?;
        let cfg = SolverConfig {
            scheme: Scheme::ForwardEuler,
            steps: 1000,
            top_r: None,
            ..*config
        };
        let sampler = Sampler::new(bank, PathFamily::GaussianBridge(flat), cfg)?;
        let mut r = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let replay = sampler.replay_diagnostics(&x_tau, &mut r)?;
        details.push(ProbeRecord {
            index: details.len(),
            label: format!("beta sum probe {p}"),
            t: None,
            lhs: (replay.beta.iter().sum::<f64>() - 1.0).abs(),
            rhs: 1e-6,
        });
    }
    Ok(DiagnosticReport::from_probes("duhamel", 0.0, details))
}

fn softmax_weights(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Weights in intrinsic coordinates `m_j / phi(t, 0)` with the constant
/// bandwidth `c_0`.
pub fn intrinsic_weights(t: f64, y: &[f64], bank: &TransitionBank, schedule: &BridgeSchedule) -> Vec<f64> {
    let phi = schedule.phi(t, 0.0);
    let c0_sq = schedule.c2(0.0);
    let logits: Vec<f64> = (0..bank.len())
        .map(|j| {
            let d2: f64 = bank
                .x1(j)
                .iter()
                .zip(bank.x2(j))
                .zip(y)
                .map(|((a, b), yk)| {
                    let m_tilde = ((1.0 - t) * a + t * b) / phi;
                    (yk - m_tilde) * (yk - m_tilde)
                })
                .sum();
            -d2 / (2.0 * c0_sq)
        })
        .collect();
    softmax_weights(&logits)
}

/// Kernel equivariance of the weights and the intrinsic label identity
/// `y_j(t) / phi(t, 0) = d/dt [m_j(t) / phi(t, 0)]`.
pub fn check_equivariance<R: Rng + ?Sized>(
    bank: &TransitionBank,
    schedule: &BridgeSchedule,
    n_probes: usize,
    rng: &mut R,
) -> Result<DiagnosticReport> {
    let d = bank.dim();
    let mut details = Vec::new();
    for i in 0..n_probes {
        let t = probe_time(i, rng);
        let phi = schedule.phi(t, 0.0);
        let z = probe_point(bank, rng);
        let y: Vec<f64> = z.iter().map(|v| v / phi).collect();
        let scaled: Vec<f64> = y.iter().map(|v| phi * v).collect();
        let alpha = responsibilities(t, &scaled, bank, schedule)?;
        let w = intrinsic_weights(t, &y, bank, schedule);
        let diff = alpha.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        details.push(ProbeRecord {
            index: details.len(),
            label: "kernel equivariance".into(),
            t: Some(t),
            lhs: diff,
            rhs: 0.0,
        });
    }

    // intrinsic labels against a central difference, checked at h and h/2
    let h = 1e-3;
    let m_tilde = |j: usize, t: f64| -> Vec<f64> {
        let phi = schedule.phi(t, 0.0);
        bank.x1(j)
            .iter()
            .zip(bank.x2(j))
            .map(|(a, b)| ((1.0 - t) * a + t * b) / phi)
            .collect()
    };
    let n_labels = n_probes.clamp(1, 50);
    for _ in 0..n_labels {
        let t = rng.random_range(0.05..0.95);
        let j = rng.random_range(0..bank.len());
        let labels = forcing_labels(t, bank, schedule);
        let phi = schedule.phi(t, 0.0);
        let exact: Vec<f64> = labels[j * d..(j + 1) * d].iter().map(|v| v / phi).collect();
        let err = |h: f64| -> f64 {
            let fwd = m_tilde(j, t + h);
            let bwd = m_tilde(j, t - h);
            let fd: Vec<f64> = fwd.iter().zip(&bwd).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            norm(&exact.iter().zip(&fd).map(|(a, b)| a - b).collect::<Vec<_>>())
        };
        let (e1, e2) = (err(h), err(h / 2.0));
        let scale = 1.0 + norm(&exact);
        details.push(ProbeRecord {
            index: details.len(),
            label: "intrinsic label, h".into(),
            t: Some(t),
            lhs: e1,
            rhs: 1e-4 * scale,
        });
        // O(h^2): halving h divides the error by ~4 unless already at rounding level
        if e1 > 1e-9 * scale {
            details.push(ProbeRecord {
                index: details.len(),
                label: "intrinsic label, order".into(),
                t: Some(t),
                lhs: (e1 / e2 - 4.0).abs(),
                rhs: 0.5,
            });
        }
    }
    Ok(DiagnosticReport::from_probes("equivariance", 1e-12, details))
}

/// One row of the cost table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub m: usize,
    pub r: Option<usize>,
    pub distance_evals: usize,
    pub mixture_terms: usize,
    pub seconds_per_eval: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    /// Largest over smallest per-transition dense time across sizes.
    pub dense_linearity_spread: f64,
    pub report: DiagnosticReport,
}

fn time_evals(field: &VelocityField, t: f64, z: &[f64]) -> Result<f64> {
    let mut scratch = crate::velocity::Scratch::new();
    let mut out = vec![0.0; z.len()];
    let mut best = f64::INFINITY;
    for _ in 0..5 {
        let mut reps = 0usize;
        let start = Instant::now();
        while start.elapsed().as_secs_f64() < 0.01 || reps < 3 {
            field.eval_into(t, z, &mut out, &mut scratch, false)?;
            reps += 1;
        }
        best = best.min(start.elapsed().as_secs_f64() / reps as f64);
    }
    Ok(best)
}

/// Operation counts and wall-clock per velocity evaluation on prefixes of
/// `bank` of the given sizes, dense and for each `R`.
pub fn measure_cost(
    bank: &TransitionBank,
    sizes: &[usize],
    r_values: &[usize],
    schedule: &BridgeSchedule,
) -> Result<CostReport> {
    let family = PathFamily::GaussianBridge(*schedule);
    let z = bank.x1(0).to_vec();
    let t = 0.3;
    let mut rows = Vec::new();
    let mut details = Vec::new();
    let mut per_transition = Vec::new();
    for &m in sizes {
        if m == 0 || m > bank.len() {
            return Err(Error::Range(format!("bank size {m} outside 1..={}", bank.len())));
        }
        let idx: Vec<usize> = (0..m).collect();
        let sub = bank.subset(&idx)?;
        let dense = VelocityField::new(&sub, family, None)?;
        let ev = dense.evaluate(t, &z)?;
        let secs = time_evals(&dense, t, &z)?;
        per_transition.push(secs / m as f64);
        details.push(ProbeRecord {
            index: details.len(),
            label: format!("dense M={m} count mismatch"),
            t: None,
            lhs: (ev.distance_evals.abs_diff(m) + ev.mixture_terms.abs_diff(m)) as f64,
            rhs: 0.0,
        });
        rows.push(CostRow {
            m,
            r: None,
            distance_evals: ev.distance_evals,
            mixture_terms: ev.mixture_terms,
            seconds_per_eval: secs,
        });
        for &r in r_values.iter().filter(|r| **r <= m) {
            let trunc = VelocityField::new(&sub, family, Some(r))?;
            let ev = trunc.evaluate(t, &z)?;
            details.push(ProbeRecord {
                index: details.len(),
                label: format!("top-R M={m} R={r} count mismatch"),
                t: None,
                lhs: (ev.distance_evals.abs_diff(m) + ev.mixture_terms.abs_diff(r)) as f64,
                rhs: 0.0,
            });
            rows.push(CostRow {
                m,
                r: Some(r),
                distance_evals: ev.distance_evals,
                mixture_terms: ev.mixture_terms,
                seconds_per_eval: time_evals(&trunc, t, &z)?,
            });
        }
    }
    let spread = if per_transition.is_empty() {
        1.0
    } else {
        let max = per_transition.iter().copied().fold(0.0, f64::max);
        let min = per_transition.iter().copied().fold(f64::INFINITY, f64::min);
        max / min
    };
    details.push(ProbeRecord {
        index: details.len(),
        label: "dense time per transition spread".into(),
        t: None,
        lhs: spread,
        rhs: 2.0,
    });
    Ok(CostReport {
        rows,
        dense_linearity_spread: spread,
        report: DiagnosticReport::from_probes("cost", 0.0, details),
    })
}
