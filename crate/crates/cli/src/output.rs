use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, Result};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Pretty JSON with a trailing newline; parent directories are created.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Rows of a long-format table `(trajectory, step, quantity, value, sample)`.
#[derive(Debug, Default)]
pub struct LongTable {
    rows: Vec<(String, usize, String, f64, Option<usize>)>,
}

impl LongTable {
    pub fn push(&mut self, trajectory: &str, step: usize, quantity: &str, value: f64, sample: Option<usize>) {
        self.rows
            .push((trajectory.to_string(), step, quantity.to_string(), value, sample));
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            ensure_dir(parent)?;
        }
        let io_err = |e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            other => CliError::Format {
                path: path.to_path_buf(),
                message: format!("{other:?}"),
            },
        };
        let mut w = csv::Writer::from_path(path).map_err(io_err)?;
        w.write_record(["trajectory", "step", "quantity", "value", "sample"])
            .map_err(io_err)?;
        for (traj, step, q, v, s) in &self.rows {
            let sample = s.map(|s| s.to_string()).unwrap_or_default();
            w.write_record([traj.as_str(), &step.to_string(), q.as_str(), &v.to_string(), &sample])
                .map_err(io_err)?;
        }
        w.flush().map_err(|e| CliError::io(path, e))
    }
}

/// Plain CSV with a header row.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let io_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Format {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    };
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(header).map_err(io_err)?;
    for r in rows {
        w.write_record(r).map_err(io_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
