use std::path::PathBuf;

use flowcast::bank::write_trajectory_csv;
use flowcast::dynamics::{generate_benchmark, sample_trajectory};

use crate::config::RunConfig;
use crate::data::{resolve_lyapunov, resolve_spec, sampling_plan, Manifest, ManifestEntry, MANIFEST_FILE};
use crate::error::Result;
use crate::output::{ensure_dir, write_json};

#[derive(Debug, Clone)]
pub struct GenerateOutput {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

/// Simulates the benchmark and writes one CSV per trajectory plus a manifest.
pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateOutput> {
    cfg.validate()?;
    let spec = resolve_spec(cfg)?;
    let (lyap, converged) = resolve_lyapunov(cfg, &spec)?;
    let plan = sampling_plan(cfg, &spec, lyap);
    let trajs = generate_benchmark(&spec, &plan, cfg.seed)?;
    log::info!(
        "{} trajectories of {} points, lambda = {lyap:.4}, dt = {:.5}",
        trajs.len(),
        plan.length,
        plan.dt()
    );

    let dt = plan.dt();
    let dt_internal = dt / plan.substeps as f64;
    let deviation = match trajs.first() {
        Some(t) => {
            let n = plan.points_per_lyapunov_time + 1;
            let coarse = sample_trajectory(&spec, &t.states[0], n, dt, plan.substeps, "coarse")?;
            let fine = sample_trajectory(&spec, &t.states[0], n, dt, 2 * plan.substeps, "fine")?;
            coarse
                .states
                .iter()
                .zip(&fine.states)
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                .fold(0.0, f64::max)
        }
        None => 0.0,
    };

    let dir = cfg.data_dir();
    ensure_dir(&dir)?;
    let mut entries = Vec::with_capacity(trajs.len());
    for t in &trajs {
        let file = format!("{}.csv", t.id);
        write_trajectory_csv(t, &dir.join(&file))?;
        entries.push(ManifestEntry {
            id: t.id.clone(),
            file,
            rows: t.len(),
        });
    }
    let manifest = Manifest {
        system: spec,
        lyapunov_exponent: lyap,
        lyapunov_estimated: converged.is_some(),
        lyapunov_converged: converged,
        plan,
        dt,
        dt_internal,
        rk4_step_doubling_deviation: deviation,
        seed: cfg.seed,
        trajectories: entries,
        config: cfg.clone(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    cfg.echo("config.resolved.json")?;
    Ok(GenerateOutput { dir, manifest })
}
