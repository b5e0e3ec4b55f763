//! Transition memory bank.
//!
//! Raw trajectories are flattened into the set of consecutive state pairs
//! `(x_tau, x_{tau+1})`. The bank is the whole "model": every velocity
//! evaluation is a weighted sum over it. Trajectories travel as CSV files
//! (`t,x0,...,x{d-1}`), banks as JSON with flat numeric arrays.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Version tag written into bank files.
pub const BANK_FORMAT_VERSION: u32 = 1;

/// Transition-count convention reproduced by [`extract_transitions`].
pub const COUNT_CONVENTION: &str = "M = sum_n (T_n - 1)";

/// One observed trajectory sampled at a fixed interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub dt: f64,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Validates `T >= 2`, a common dimension `d >= 1`, finite entries and `dt > 0`.
    pub fn new(id: impl Into<String>, dt: f64, states: Vec<Vec<f64>>) -> Result<Self> {
        let id = id.into();
        let invalid = |reason: String| Error::InvalidTrajectory {
            id: id.clone(),
            reason,
        };
        if !(dt.is_finite() && dt > 0.0) {
            return Err(invalid(format!("dt must be positive and finite, got {dt}")));
        }
        if states.len() < 2 {
            return Err(invalid(format!(
                "need at least 2 states, got {}",
                states.len()
            )));
        }
        let d = states[0].len();
        if d == 0 {
            return Err(invalid("states have dimension 0".into()));
        }
        for (i, s) in states.iter().enumerate() {
            if s.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: s.len(),
                    context: format!("trajectory '{id}', state {i}"),
                });
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("state {i} has a non-finite entry")));
            }
        }
        Ok(Self { id, dt, states })
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// The first `n` states as a new trajectory with the same id and `dt`.
    pub fn head(&self, n: usize) -> Result<Trajectory> {
        Trajectory::new(
            self.id.clone(),
            self.dt,
            self.states[..n.min(self.states.len())].to_vec(),
        )
    }
}

/// Where a stored transition came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionSource {
    pub trajectory: String,
    pub step: usize,
}

/// A single stored pair `(x1, x2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub source: TransitionSource,
}

/// Immutable memory bank of `M` transitions in `R^d`.
///
/// States are stored row-major in flat buffers; the increments `x2 - x1`
/// are precomputed since every velocity evaluation needs them.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBank {
    d: usize,
    x1: Vec<f64>,
    x2: Vec<f64>,
    dx: Vec<f64>,
    sources: Vec<TransitionSource>,
    scale: Vec<f64>,
}

impl TransitionBank {
    /// Builds a bank from row-major `x1`/`x2` buffers, re-validating every invariant.
    pub fn from_flat(
        d: usize,
        x1: Vec<f64>,
        x2: Vec<f64>,
        sources: Vec<TransitionSource>,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::Range("bank dimension must be >= 1".into()));
        }
        if x1.is_empty() {
            return Err(Error::NoData("bank has no transitions".into()));
        }
        if !x1.len().is_multiple_of(d) || x2.len() != x1.len() {
            return Err(Error::DimensionMismatch {
                expected: x1.len(),
                found: x2.len(),
                context: format!("flat buffers for d = {d}"),
            });
        }
        let m = x1.len() / d;
        if sources.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: sources.len(),
                context: "number of transition sources".into(),
            });
        }
        if let Some(pos) = x1.iter().chain(x2.iter()).position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(format!(
                "bank entry {pos} is not finite"
            )));
        }
        let dx = x1.iter().zip(&x2).map(|(a, b)| b - a).collect();
        let scale = state_scale(d, &x1, &x2);
        for (k, s) in scale.iter().enumerate() {
            if *s == 0.0 {
                log::warn!("bank coordinate {k} is constant; recorded scale 0");
            }
        }
        Ok(Self {
            d,
            x1,
            x2,
            dx,
            sources,
            scale,
        })
    }

    pub fn from_transitions(transitions: &[Transition]) -> Result<Self> {
        let first = transitions
            .first()
            .ok_or_else(|| Error::NoData("no transitions".into()))?;
        let d = first.x1.len();
        let mut x1 = Vec::with_capacity(transitions.len() * d);
        let mut x2 = Vec::with_capacity(transitions.len() * d);
        let mut sources = Vec::with_capacity(transitions.len());
        for (j, tr) in transitions.iter().enumerate() {
            for v in [&tr.x1, &tr.x2] {
                if v.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: v.len(),
                        context: format!("transition {j}"),
                    });
                }
            }
            x1.extend_from_slice(&tr.x1);
            x2.extend_from_slice(&tr.x2);
            sources.push(tr.source.clone());
        }
        Self::from_flat(d, x1, x2, sources)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn x1(&self, j: usize) -> &[f64] {
        &self.x1[j * self.d..(j + 1) * self.d]
    }

    pub fn x2(&self, j: usize) -> &[f64] {
        &self.x2[j * self.d..(j + 1) * self.d]
    }

    /// Stored increment `x2 - x1` of transition `j`.
    pub fn increment(&self, j: usize) -> &[f64] {
        &self.dx[j * self.d..(j + 1) * self.d]
    }

    pub fn x1_flat(&self) -> &[f64] {
        &self.x1
    }

    pub fn x2_flat(&self) -> &[f64] {
        &self.x2
    }

    pub fn increments_flat(&self) -> &[f64] {
        &self.dx
    }

    pub fn sources(&self) -> &[TransitionSource] {
        &self.sources
    }

    pub fn transition(&self, j: usize) -> Result<Transition> {
        if j >= self.len() {
            return Err(Error::Index {
                index: j,
                len: self.len(),
            });
        }
        Ok(Transition {
            x1: self.x1(j).to_vec(),
            x2: self.x2(j).to_vec(),
            source: self.sources[j].clone(),
        })
    }

    /// Per-coordinate standard deviation of all stored states (x1 and x2 together).
    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// Indices of coordinates whose stored values are all identical.
    pub fn constant_dims(&self) -> Vec<usize> {
        (0..self.d).filter(|&k| self.scale[k] == 0.0).collect()
    }

    /// Mean of the nonzero per-coordinate scales; 1 if every coordinate is constant.
    pub fn mean_scale(&self) -> f64 {
        let nonzero: Vec<f64> = self.scale.iter().copied().filter(|s| *s > 0.0).collect();
        if nonzero.is_empty() {
            1.0
        } else {
            nonzero.iter().sum::<f64>() / nonzero.len() as f64
        }
    }

    /// Componentwise min and max over all stored states.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.d];
        let mut hi = vec![f64::NEG_INFINITY; self.d];
        for row in self.x1.chunks_exact(self.d).chain(self.x2.chunks_exact(self.d)) {
            for k in 0..self.d {
                lo[k] = lo[k].min(row[k]);
                hi[k] = hi[k].max(row[k]);
            }
        }
        (lo, hi)
    }

    /// New bank containing the given transitions in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<TransitionBank> {
        let mut x1 = Vec::with_capacity(indices.len() * self.d);
        let mut x2 = Vec::with_capacity(indices.len() * self.d);
        let mut sources = Vec::with_capacity(indices.len());
        for &j in indices {
            if j >= self.len() {
                return Err(Error::Index {
                    index: j,
                    len: self.len(),
                });
            }
            x1.extend_from_slice(self.x1(j));
            x2.extend_from_slice(self.x2(j));
            sources.push(self.sources[j].clone());
        }
        Self::from_flat(self.d, x1, x2, sources)
    }

    /// SHA-256 over `d`, `M` and the little-endian bytes of the numeric payload.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.d as u64).to_le_bytes());
        hasher.update((self.len() as u64).to_le_bytes());
        for v in self.x1.iter().chain(&self.x2) {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

fn state_scale(d: usize, x1: &[f64], x2: &[f64]) -> Vec<f64> {
    let n = (x1.len() / d * 2) as f64;
    let mut mean = vec![0.0; d];
    for row in x1.chunks_exact(d).chain(x2.chunks_exact(d)) {
        for k in 0..d {
            mean[k] += row[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for row in x1.chunks_exact(d).chain(x2.chunks_exact(d)) {
        for k in 0..d {
            let e = row[k] - mean[k];
            var[k] += e * e;
        }
    }
    var.iter()
        .zip(&mean)
        .map(|(v, m)| {
            let s = (v / n).sqrt();
            // rounding noise on a constant column
            if s <= 1e-14 * m.abs().max(1e-300) {
                0.0
            } else {
                s
            }
        })
        .collect()
}

/// Flattens trajectories into consecutive pairs, in trajectory order then step order.
pub fn extract_transitions(trajectories: &[Trajectory]) -> Result<TransitionBank> {
    let first = trajectories
        .first()
        .ok_or_else(|| Error::NoData("no trajectories given".into()))?;
    let d = first.dim();
    let m: usize = trajectories.iter().map(|t| t.len().saturating_sub(1)).sum();
    let mut x1 = Vec::with_capacity(m * d);
    let mut x2 = Vec::with_capacity(m * d);
    let mut sources = Vec::with_capacity(m);
    for traj in trajectories {
        if traj.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: traj.dim(),
                context: format!("trajectory '{}'", traj.id),
            });
        }
        if traj.len() < 2 {
            return Err(Error::InvalidTrajectory {
                id: traj.id.clone(),
                reason: "fewer than 2 states".into(),
            });
        }
        for (step, pair) in traj.states.windows(2).enumerate() {
            x1.extend_from_slice(&pair[0]);
            x2.extend_from_slice(&pair[1]);
            sources.push(TransitionSource {
                trajectory: traj.id.clone(),
                step,
            });
        }
    }
    TransitionBank::from_flat(d, x1, x2, sources)
}

#[derive(Debug, Serialize, Deserialize)]
struct BankFile {
    version: u32,
    d: usize,
    #[serde(rename = "M")]
    m: usize,
    count_convention: String,
    x1: Vec<Vec<f64>>,
    x2: Vec<Vec<f64>>,
    sources: Vec<TransitionSource>,
}

/// Writes the bank as JSON: `{version, d, M, count_convention, x1, x2, sources}`.
pub fn save_bank(bank: &TransitionBank, path: &Path) -> Result<()> {
    let file = BankFile {
        version: BANK_FORMAT_VERSION,
        d: bank.d,
        m: bank.len(),
        count_convention: COUNT_CONVENTION.to_string(),
        x1: bank.x1.chunks_exact(bank.d).map(<[f64]>::to_vec).collect(),
        x2: bank.x2.chunks_exact(bank.d).map(<[f64]>::to_vec).collect(),
        sources: bank.sources.clone(),
    };
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer(&mut w, &file).map_err(|e| Error::io(path, e.into()))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_bank(path: &Path) -> Result<TransitionBank> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let meta_len = f.metadata().map_err(|e| Error::io(path, e))?.len();
    if meta_len == 0 {
        return Err(Error::NoData(format!("{} is empty", path.display())));
    }
    let file: BankFile =
        serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
    if file.m == 0 || file.x1.is_empty() {
        return Err(Error::NoData(format!("{} holds no transitions", path.display())));
    }
    if file.x1.len() != file.m || file.x2.len() != file.m {
        return Err(Error::DimensionMismatch {
            expected: file.m,
            found: file.x1.len().max(file.x2.len()),
            context: "declared M vs stored records".into(),
        });
    }
    let mut x1 = Vec::with_capacity(file.m * file.d);
    let mut x2 = Vec::with_capacity(file.m * file.d);
    for (j, (a, b)) in file.x1.iter().zip(&file.x2).enumerate() {
        for row in [a, b] {
            if row.len() != file.d {
                return Err(Error::DimensionMismatch {
                    expected: file.d,
                    found: row.len(),
                    context: format!("record {j} of {}", path.display()),
                });
            }
        }
        x1.extend_from_slice(a);
        x2.extend_from_slice(b);
    }
    TransitionBank::from_flat(file.d, x1, x2, file.sources)
}

/// Writes `t,x0,...,x{d-1}` with `t = i * dt`.
pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header = vec!["t".to_string()];
    header.extend((0..traj.dim()).map(|k| format!("x{k}")));
    w.write_record(&header).map_err(|e| csv_io(path, e))?;
    for (i, s) in traj.states.iter().enumerate() {
        let mut rec = Vec::with_capacity(s.len() + 1);
        rec.push((i as f64 * traj.dt).to_string());
        rec.extend(s.iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a trajectory CSV; `dt` is taken from the first two time stamps.
pub fn read_trajectory_csv(path: &Path, id: impl Into<String>) -> Result<Trajectory> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let headers = r.headers().map_err(|e| csv_io(path, e))?.clone();
    if headers.get(0) != Some("t") || headers.len() < 2 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "expected header t,x0,...".into(),
        });
    }
    let d = headers.len() - 1;
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        let vals: std::result::Result<Vec<f64>, _> =
            rec.iter().map(|f| f.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        if vals.len() != d + 1 {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: vals.len().saturating_sub(1),
                context: format!("{} line {line}", path.display()),
            });
        }
        times.push(vals[0]);
        states.push(vals[1..].to_vec());
    }
    if states.len() < 2 {
        return Err(Error::InvalidTrajectory {
            id: id.into(),
            reason: format!("{} has fewer than 2 rows", path.display()),
        });
    }
    Trajectory::new(id, times[1] - times[0], states)
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{other:?}"),
        },
    }
}
